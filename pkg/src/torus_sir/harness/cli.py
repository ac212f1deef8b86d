"""Command-line entry point.

Every run writes its outputs plus ``manifest.json`` into ``--out``.  The
manifest records the resolved configuration, its hash, the seed, library
versions and a sha256 per output file, so ``rerun --manifest`` can replay the
run and the hashes can be compared.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import traceback
from importlib import metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import pipelines
from .config import ConfigError, ExperimentConfig, load_config

MANIFEST = "manifest.json"
ERROR_FILE = "error.json"
CONFIG_COMMANDS = ("simulate", "pde", "lln-compare", "clt-initial", "clt-dynamic", "qv-check")


def _versions() -> dict:
    def ver(pkg):
        try:
            return metadata.version(pkg)
        except metadata.PackageNotFoundError:
            return None

    return {
        "artifact": ver("artifact"),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": ver("numba"),
        "python": platform.python_version(),
    }


def file_hashes(out: Path) -> dict[str, str]:
    """sha256 of every file under ``out`` except the manifest and error record."""
    hashes = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name not in (MANIFEST, ERROR_FILE):
            hashes[p.relative_to(out).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return hashes


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torus-sir", description="Spatial SIR on the unit torus: simulation, limit PDE and fluctuation checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "run the particle system and write event logs, snapshots and a summary",
        "pde": "solve the limit reaction-diffusion system and write density fields",
        "lln-compare": "compare particle measures with the limit densities over the N sweep",
        "clt-initial": "Monte Carlo check of the initial fluctuation covariances",
        "clt-dynamic": "particle vs Galerkin variance of the infected fluctuation field",
        "qv-check": "compare squared martingales with their predicted brackets",
    }
    for name in CONFIG_COMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", required=True, help="output directory (created if missing)")
        p.add_argument("--replicates", type=int, default=None, help="override the configured replicate count")
        if name == "simulate":
            p.add_argument("--no-positions", action="store_true", help="omit agent positions from snapshot CSVs")
    p = sub.add_parser("spectral-diag", help="partial sums of the dual-norm series at doubling cutoffs")
    p.add_argument("--s", type=float, required=True, help="Sobolev exponent")
    p.add_argument("--gamma", type=float, default=1.0, help="diffusion coefficient in the eigenvalues (default 1)")
    p.add_argument("--x", type=float, nargs=2, default=(0.0, 0.0), metavar=("X1", "X2"), help="evaluation point (default 0 0)")
    p.add_argument("--cutoffs", type=int, nargs="+", default=[8, 16, 32, 64, 128, 256], help="cutoffs, at least four")
    p.add_argument("--out", default=None, help="output directory; without it the table goes to stdout")
    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("--manifest", required=True, help="manifest.json of an earlier run")
    p.add_argument("--out", required=True, help="output directory for the replay")
    return ap


def _options(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "out", "manifest"}
    opts = {k: v for k, v in vars(args).items() if k not in skip}
    if "x" in opts:
        opts["x"] = list(opts["x"])
    return opts


def _execute(command: str, cfg: Optional[ExperimentConfig], opts: dict, out: Optional[Path]) -> dict:
    if command == "spectral-diag":
        if len(opts["cutoffs"]) < 4:
            raise ConfigError("spectral-diag needs at least four cutoffs")
        res = pipelines.spectral_diag(opts["s"], opts["gamma"], tuple(opts["x"]), opts["cutoffs"], out)
        if out is None:
            from ..spectral import dual_norm_sum_diagnostic, diagnostic_to_csv

            rows = dual_norm_sum_diagnostic(opts["s"], opts["gamma"], tuple(opts["x"]), sorted(opts["cutoffs"]))
            sys.stdout.write(diagnostic_to_csv(rows, opts["s"], opts["gamma"]))
            sys.stdout.write(json.dumps(res["windows"], sort_keys=True) + "\n")
        return res
    if command == "simulate" and opts.get("no_positions"):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "params": {**cfg.params, "positions": False}})
    return pipelines.PIPELINES[command](cfg, out)


def _run(command: str, cfg: Optional[ExperimentConfig], opts: dict, out: Optional[Path]) -> None:
    if cfg is not None and opts.get("replicates") is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "replicates": opts["replicates"]})
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    _execute(command, cfg, opts, out)
    if out is None:
        return
    manifest = {
        "command": command,
        "options": opts,
        "config": None if cfg is None else cfg.to_dict(),
        "config_hash": None if cfg is None else cfg.config_hash(),
        "seed": None if cfg is None else cfg.seed,
        "versions": _versions(),
        "outputs": file_hashes(out),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def _load_manifest(path: Path) -> tuple[str, Optional[ExperimentConfig], dict]:
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        m = json.loads(path.read_text())
        command, opts = m["command"], dict(m["options"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed manifest: {exc}") from exc
    cfg = None if m.get("config") is None else ExperimentConfig.from_dict(m["config"])
    if cfg is not None and cfg.config_hash() != m.get("config_hash"):
        raise ConfigError("manifest config does not match its recorded hash")
    return command, cfg, opts


def _report_error(kind: str, exc: BaseException, out: Optional[Path], code: int) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if code == 1:
        record["traceback"] = traceback.format_exc()
    text = json.dumps(record, sort_keys=True)
    sys.stderr.write(text + "\n")
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / ERROR_FILE).write_text(text + "\n")
        except OSError:
            pass
    return code


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run; 0 on success, 2 for configuration errors, 1 otherwise."""
    args = build_parser().parse_args(argv)
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        if args.command == "rerun":
            command, cfg, opts = _load_manifest(Path(args.manifest))
        elif args.command == "spectral-diag":
            command, cfg, opts = args.command, None, _options(args)
        else:
            command, cfg, opts = args.command, load_config(args.config), _options(args)
            if cfg.mode != command:
                raise ConfigError(f"config mode {cfg.mode!r} does not match subcommand {command!r}")
        _run(command, cfg, opts, out)
    except ConfigError as exc:
        return _report_error("config", exc, out, 2)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        return _report_error("runtime", exc, out, 1)
    return 0


def main() -> None:
    sys.exit(run_cli())
