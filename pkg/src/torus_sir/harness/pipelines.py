"""Experiment pipelines.  Each writes its outputs into ``out`` and returns a
JSON-serialisable summary; all randomness flows from the configured seed."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import fluctuations as fl
from ..limit_pde import mass, solve_auto, write_field
from ..simulator import (
    empirical_measures,
    events_to_csv,
    replicate_rng,
    run,
    snapshots_to_csv,
    summary_records,
    summary_to_jsonl,
    track_martingale,
)
from ..spectral import S_DYNAMIC, dual_norm_sum_diagnostic, classify_series, diagnostic_to_csv, doubling_ratio
from .config import ExperimentConfig
from .fortet import DEFAULT_RESOLUTION, fortet_distance

LLN_SCHEMA = "# schema: torus_sir/lln_rows/1"
CLASSES = ("S", "I", "N")
# replicate index reserved for Galerkin noise so it never collides with particle replicates
GALERKIN_STREAM = 2**48


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _csv_text(schema: str, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(schema + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _times(cfg: ExperimentConfig) -> tuple[float, ...]:
    ts = cfg.params.get("times")
    return tuple(float(t) for t in ts) if ts else cfg.sim.snapshot_times


def _snapshot_config(cfg: ExperimentConfig, n_agents: int, times: Sequence[float]):
    d = cfg.sim_for(n_agents).to_dict()
    d["snapshot_times"] = sorted(set(d["snapshot_times"]) | set(times))
    return type(cfg.sim).from_dict(d)


# --- simulate / pde --------------------------------------------------------------------


def simulate(cfg: ExperimentConfig, out: Path) -> dict:
    sim = cfg.sim_for()
    positions = bool(cfg.params.get("positions", True))
    records = []
    for r in range(cfg.replicates):
        res = run(sim, r)
        (out / f"events_r{r}.csv").write_text(events_to_csv(res.events))
        (out / f"snapshots_r{r}.csv").write_text(snapshots_to_csv(res.snapshots, positions))
        records += summary_records(res)
    (out / "summary.jsonl").write_text(summary_to_jsonl(records))
    return {"replicates": cfg.replicates, "final_counts": [r for r in records if r["time"] == sim.snapshot_times[-1]]}


def pde(cfg: ExperimentConfig, out: Path) -> dict:
    pcfg = cfg.pde_config(_times(cfg))
    sol = solve_auto(pcfg)
    for k, t in enumerate(sol.times):
        for name, arr in (("f_S", sol.f_s), ("f_I", sol.f_i), ("f", sol.f)):
            write_field(out / f"{name}_t{k}", arr[k], float(t), name)
    summary = {
        "times": sol.times.tolist(),
        "mass_S": [mass(x) for x in sol.f_s],
        "mass_I": [mass(x) for x in sol.f_i],
        "min_value": sol.min_value,
        "f_range": list(sol.f_range),
        "order_excess": sol.order_excess,
        "mass_balance_defect": sol.mass_balance_defect(),
    }
    _write_json(out / "pde_summary.json", summary)
    return summary


# --- LLN comparison ----------------------------------------------------------------------


@dataclass
class ComparisonReport:
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def medians(self, key: str, t: float) -> list[float]:
        return [self.summary["by_n"][str(n)][_tkey(t)][key]["median"] for n in self.summary["n_sweep"]]


def _tkey(t: float) -> str:
    return repr(float(t))


def lln_compare(cfg: ExperimentConfig, out: Path | None = None) -> ComparisonReport:
    """Particle system vs limit PDE over the N sweep.

    Per (N, replicate, t): Fortet distances (LP and dictionary bound) for the
    S, I and total measures, class-mass errors and H^{-s} fluctuation norms.
    """
    times = _times(cfg)
    resolution = int(cfg.params.get("resolution", DEFAULT_RESOLUTION))
    s = float(cfg.params.get("s", S_DYNAMIC))
    cutoff = int(cfg.params.get("cutoff", 16))
    sweep = cfg.n_sweep or (cfg.sim.N,)
    sol = solve_auto(cfg.pde_config(times))
    limit = {t: sol.fields_at(t) for t in times}
    rows = []
    for n in sweep:
        sim = _snapshot_config(cfg, n, times)
        for r in range(cfg.replicates):
            res = run(sim, r)
            for t in times:
                snap = res.snapshot_at(t)
                meas = empirical_measures(snap)
                f_s, f_i, f = limit[t]
                row = {"N": n, "replicate": r, "time": float(t)}
                for name, ref in zip(CLASSES, (f_s, f_i, f)):
                    est = fortet_distance(meas[name], ref, resolution)
                    row[f"dF_{name}"] = est.lp
                    row[f"dF_lb_{name}"] = est.lower_bound
                row["mass_err_S"] = abs(meas["S"].mass - mass(f_s))
                row["mass_err_I"] = abs(meas["I"].mass - mass(f_i))
                fields = fl.fluctuation_fields(snap, f_s, f_i, f)
                for name in ("U", "V", "Z"):
                    row[f"norm_{name}"] = fields[name].norm(s, cutoff, cfg.sim.gamma or 1.0)
                rows.append(row)
    report = ComparisonReport(rows, _lln_summary(rows, sweep, times))
    if out is not None:
        keys = list(rows[0])
        (out / "lln_rows.csv").write_text(_csv_text(LLN_SCHEMA, keys, [[row[k] for k in keys] for row in rows]))
        _write_json(out / "lln_summary.json", report.summary)
    return report


def _lln_summary(rows: list[dict], sweep: Sequence[int], times: Sequence[float]) -> dict:
    metrics = [k for k in rows[0] if k not in ("N", "replicate", "time")]
    by_n: dict = {}
    for n in sweep:
        by_n[str(n)] = {}
        for t in times:
            sel = [r for r in rows if r["N"] == n and r["time"] == float(t)]
            by_n[str(n)][_tkey(t)] = {
                k: {
                    "median": float(np.median([r[k] for r in sel])),
                    "rms": float(math.sqrt(np.mean([r[k] ** 2 for r in sel]))),
                }
                for k in metrics
            }
    trends = {}
    for t in times:
        tk = _tkey(t)
        for k in metrics:
            med = [by_n[str(n)][tk][k]["median"] for n in sweep]
            rms = [by_n[str(n)][tk][k]["rms"] for n in sweep]
            trends[f"{k}@{tk}"] = {
                "medians": med,
                "strictly_decreasing": bool(all(b < a for a, b in zip(med, med[1:]))),
                "median_ratios": [a / b if b > 0 else None for a, b in zip(med, med[1:])],
                "rms_ratios": [a / b if b > 0 else None for a, b in zip(rms, rms[1:])],
            }
    return {"n_sweep": list(sweep), "times": [float(t) for t in times], "by_n": by_n, "trends": trends}


# --- CLT pipelines -----------------------------------------------------------------------


def clt_initial(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    sim = cfg.sim_for()
    phi, psi, phi2 = (cfg.test_function(k) for k in ("phi", "psi", "phi2"))
    rep = fl.initial_covariances(phi, psi, phi2, sim.initial)
    mc = fl.mc_initial_clt(sim, cfg.replicates, phi, psi, phi2, int(cfg.params.get("bootstrap", 200)))
    rows = mc.compare(rep)
    result = {"rows": rows, "psd": rep.is_psd(), "eigenvalues": np.linalg.eigvalsh(rep.matrix()).tolist()}
    if out is not None:
        _write_json(out / "clt_initial.json", result)
    return result


def _variance_se(x: np.ndarray) -> float:
    """Standard error of the sample variance from the spread of squared deviations."""
    d2 = (x - x.mean()) ** 2
    return float(d2.std(ddof=1) / math.sqrt(len(x)))


def clt_dynamic(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    """Var((V^N_t, psi)) from particles at each N vs the Galerkin limit."""
    t = float(cfg.params.get("time", cfg.sim.snapshot_times[-1]))
    psi = cfg.test_function("psi")
    tol = cfg.tolerance("clt_dynamic_rel", 0.25)
    pcfg = cfg.pde_config((t,))
    f_s, f_i, f = solve_auto(pcfg).fields_at(t)
    paths = fl.galerkin_solve_UV(
        pcfg,
        int(cfg.params.get("galerkin_paths", 1000)),
        t,
        float(cfg.params.get("galerkin_dt", 0.005)),
        replicate_rng(cfg.seed, GALERKIN_STREAM),
        (t,),
        cutoff=int(cfg.params.get("galerkin_cutoff", fl.DEFAULT_GALERKIN_CUTOFF)),
    )
    g = paths.pairing("v", psi)[0]
    g_var, g_se = float(g.var(ddof=1)), _variance_se(g)
    rows = []
    for n in cfg.n_sweep or (cfg.sim.N,):
        sim = _snapshot_config(cfg, n, (t,))
        vals = []
        for r in range(cfg.replicates):
            snap = run(sim, r).snapshot_at(t)
            vals.append(fl.empirical_fluctuation(empirical_measures(snap)["I"], f_i, n).pair(psi))
        x = np.array(vals)
        est, se = float(x.var(ddof=1)), _variance_se(x)
        rel = est / g_var - 1.0
        rows.append({
            "quantity": f"Var(V,psi) N={n}", "N": n, "time": t,
            "estimate": est, "se": math.hypot(se, g_se), "predicted": g_var,
            "z_score": (est - g_var) / math.hypot(se, g_se), "relative_difference": rel,
            "within_tolerance": bool(abs(rel) <= tol),
        })
    result = {"rows": rows, "galerkin_variance": g_var, "galerkin_se": g_se, "tolerance": tol}
    if out is not None:
        _write_json(out / "clt_dynamic.json", result)
    return result


def qv(cfg: ExperimentConfig, out: Path | None = None) -> dict:
    times = [t for t in _times(cfg) if t > 0]
    sim = _snapshot_config(cfg, cfg.sim.N, times)
    phi = cfg.test_function("phi")
    tracks = [track_martingale(sim, phi, r)[1] for r in range(cfg.replicates)]
    rows = fl.qv_check(tracks, times)
    result = {"rows": rows}
    if out is not None:
        _write_json(out / "qv_check.json", result)
    return result


# --- spectral diagnostic -------------------------------------------------------------------


def spectral_diag(s: float, gamma: float = 1.0, x=(0.0, 0.0), cutoffs=(8, 16, 32, 64, 128, 256), out: Path | None = None) -> dict:
    """Partial sums at doubling cutoffs, classified on every 4-cutoff window."""
    cutoffs = sorted(int(c) for c in cutoffs)
    rows = dual_norm_sum_diagnostic(s, gamma, x, cutoffs)
    windows = {}
    for end in range(3, len(rows)):
        win = rows[end - 3:end + 1]
        windows[str(win[-1].cutoff)] = {
            "value": classify_series([r.value_sum for r in win]),
            "value_ratio": doubling_ratio([r.value_sum for r in win]),
            "grad": classify_series([r.grad_sum for r in win]),
            "grad_ratio": doubling_ratio([r.grad_sum for r in win]),
        }
    result = {"s": s, "gamma": gamma, "x": list(x), "windows": windows}
    if out is not None:
        (out / "spectral_diag.csv").write_text(diagnostic_to_csv(rows, s, gamma))
        _write_json(out / "spectral_diag.json", result)
    return result


PIPELINES = {
    "simulate": simulate,
    "pde": pde,
    "lln-compare": lambda c, o: lln_compare(c, o).summary,
    "clt-initial": clt_initial,
    "clt-dynamic": clt_dynamic,
    "qv-check": qv,
}
