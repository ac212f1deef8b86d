"""Deterministic limit of the particle system on a periodic cell grid.

Solves, for the susceptible and infected densities,

    d/dt f_S = gamma lap f_S - G
    d/dt f_I = gamma lap f_I + G - alpha f_I
    G        = beta f_S K*(f_I / K*f)

where f = heat flow of the initial density g.  Time stepping is Strang
splitting: exact spectral half heat steps around an RK4 reaction step that
uses f frozen at the step midpoint.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .simulator import InitialCondition, SimConfig, cell_centres
from .torus import KernelSpec, kernel_matrix, kernel_on_offsets

NEG_TOL = 1e-8
DENOM_TOL = 1e-12
HEAT_SCHEMES = ("spectral", "lattice")
FIELD_SCHEMA = "torus_sir/field/1"


@dataclass(frozen=True)
class PdeConfig:
    beta: float
    alpha: float
    gamma: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    initial: InitialCondition = field(default_factory=InitialCondition)
    T: float = 1.0
    n_grid: int = 128
    dt: float = 0.005
    output_times: tuple[float, ...] = ()
    heat_scheme: str = "spectral"

    def __post_init__(self):
        n = self.n_grid
        if self.heat_scheme not in HEAT_SCHEMES:
            raise ValueError(f"heat_scheme must be one of {HEAT_SCHEMES}")
        if n < 64 or n & (n - 1):
            raise ValueError("n_grid must be a power of two >= 64")
        if not 0 < self.dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01]")
        if self.beta < 0 or self.alpha < 0 or self.gamma < 0:
            raise ValueError("rates must be non-negative")
        _check_resolution(self.kernel, n)
        ts = tuple(float(t) for t in self.output_times) or (0.0, float(self.T))
        if list(ts) != sorted(ts) or ts[0] < 0 or ts[-1] > self.T + 1e-12:
            raise ValueError("output_times must be sorted within [0, T]")
        object.__setattr__(self, "output_times", ts)

    @classmethod
    def from_sim(
        cls, sim: SimConfig, n_grid: int = 128, dt: float = 0.005,
        output_times: Sequence[float] = (), heat_scheme: str = "spectral",
    ) -> "PdeConfig":
        return cls(
            sim.beta, sim.alpha, sim.gamma, sim.kernel, sim.initial, sim.T, n_grid, dt,
            tuple(output_times) or tuple(sim.snapshot_times) or (0.0, sim.T), heat_scheme,
        )

    def to_dict(self) -> dict:
        return {
            "beta": self.beta, "alpha": self.alpha, "gamma": self.gamma,
            "kernel": self.kernel.to_dict(), "initial": self.initial.to_dict(),
            "T": self.T, "n_grid": self.n_grid, "dt": self.dt, "output_times": list(self.output_times),
            "heat_scheme": self.heat_scheme,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PdeConfig":
        d = dict(d)
        d["kernel"] = KernelSpec.from_dict(d.get("kernel", {}))
        d["initial"] = InitialCondition.from_dict(d.get("initial", {}))
        d["output_times"] = tuple(d.get("output_times", ()))
        return cls(**d)


def _check_resolution(kernel: KernelSpec, n_grid: int) -> None:
    if not kernel.is_constant and 1.0 / n_grid > kernel.radius / 4:
        raise ValueError(f"grid spacing 1/{n_grid} does not resolve kernel radius {kernel.radius} (need h <= R/4)")


# --- grid operators --------------------------------------------------------------------


@lru_cache(maxsize=16)
def _kernel_hat(kernel: KernelSpec, n_grid: int) -> np.ndarray:
    return np.fft.rfft2(kernel_on_offsets(kernel, n_grid)) / n_grid**2


def kernel_convolve(values: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """(K * u)(x_a) = h^2 sum_b K(x_a, x_b) u_b on the periodic grid, via the FFT.

    Accepts a single (n, n) field or a stack (..., n, n).
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[-1]
    if kernel.is_constant:
        return np.broadcast_to(kernel.amplitude * values.mean(axis=(-2, -1))[..., None, None], values.shape).copy()
    _check_resolution(kernel, n)
    return np.fft.irfft2(np.fft.rfft2(values) * _kernel_hat(kernel, n), s=(n, n))


def kernel_convolve_direct(values: np.ndarray, kernel: KernelSpec, chunk: int = 512) -> np.ndarray:
    """Same sum evaluated pair by pair from torus distances; O(n^4), for checking."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    pts = cell_centres(n).reshape(-1, 2)
    flat = values.reshape(-1)
    out = np.empty(n * n)
    for lo in range(0, n * n, chunk):
        out[lo:lo + chunk] = kernel_matrix(kernel, pts[lo:lo + chunk], pts) @ flat
    return out.reshape(n, n) / n**2


def _wave_sq(n: int, scheme: str = "spectral") -> np.ndarray:
    """Symbol |k|^2 of -Laplacian / (4 pi^2) on the n x n grid.

    "spectral" is the exact symbol; "lattice" is the 5-point Laplacian,
    (n/pi)^2 (sin^2(pi k1/n) + sin^2(pi k2/n)).
    """
    k = np.fft.fftfreq(n, 1.0 / n)
    if scheme == "spectral":
        return k[:, None] ** 2 + k[None, :] ** 2
    if scheme == "lattice":
        s = (n / math.pi * np.sin(math.pi * k / n)) ** 2
        return s[:, None] + s[None, :]
    raise ValueError(f"unknown heat scheme {scheme!r}")


def heat_step(values: np.ndarray, dt: float, gamma: float, scheme: str = "spectral") -> np.ndarray:
    """Heat semigroup exp(dt * gamma * Laplacian) applied through the FFT.

    scheme="spectral" multiplies grid mode k by exp(-4 pi^2 gamma |k|^2 dt)
    (exact on trigonometric polynomials). scheme="lattice" uses the 5-point
    Laplacian instead; it is second order in h and maps non-negative data to
    non-negative data for every dt, which the spectral version does not for
    rough data and small dt.
    """
    values = np.asarray(values, dtype=float)
    if dt < 0 or gamma < 0:
        raise ValueError("dt and gamma must be non-negative")
    if gamma == 0 or dt == 0:
        return values.copy()
    n = values.shape[-1]
    mult = np.exp(-4 * math.pi**2 * gamma * _wave_sq(n, scheme)[:, : n // 2 + 1] * dt)
    return np.fft.irfft2(np.fft.rfft2(values) * mult, s=(n, n))


def infection_term(f_s: np.ndarray, f_i: np.ndarray, f: np.ndarray, kernel: KernelSpec, beta: float) -> np.ndarray:
    """beta * f_S * K*(f_I / K*f)."""
    denom = kernel_convolve(f, kernel)
    return _infection(f_s, f_i, denom, kernel, beta)


def _infection(f_s, f_i, denom, kernel, beta):
    if beta == 0:
        return np.zeros_like(f_s)
    lo = float(denom.min())
    if lo < DENOM_TOL:
        raise FloatingPointError(f"K*f dropped to {lo:.3e}; density below its lower bound?")
    return beta * f_s * kernel_convolve(f_i / denom, kernel)


# --- initial data ----------------------------------------------------------------------


def initial_fields(initial: InitialCondition, n_grid: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(f_S(0), f_I(0), g) with the region indicator sampled at cell centres."""
    g = initial.density.grid(n_grid)
    in_a = initial.region.contains(cell_centres(n_grid).reshape(-1, 2)).reshape(n_grid, n_grid)
    p = initial.p
    f_i = np.where(in_a, p, 0.0) * g
    f_s = np.where(in_a, 1.0 - p, 1.0) * g
    return f_s, f_i, g


# --- solvers ---------------------------------------------------------------------------


@dataclass
class PdeSolution:
    times: np.ndarray
    f_s: np.ndarray
    f_i: np.ndarray
    f: np.ndarray
    step_times: np.ndarray
    mass_s: np.ndarray
    mass_i: np.ndarray
    recovered: np.ndarray
    min_value: float
    f_range: tuple[float, float]
    order_excess: float
    n_grid: int

    def index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-12))
        if len(hits) == 0:
            raise KeyError(f"time {t} not among outputs {self.times.tolist()}")
        return int(hits[0])

    def fields_at(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.index(t)
        return self.f_s[k], self.f_i[k], self.f[k]

    def mass_balance_defect(self) -> float:
        """max over steps of |dM_S + dM_I + alpha int M_I| per unit time, with the
        integral taken by the scheme's own RK4 stage weights."""
        if len(self.step_times) < 2:
            return 0.0
        total = self.mass_s + self.mass_i + self.recovered
        span = self.step_times[-1] - self.step_times[0]
        return float(np.max(np.abs(total - total[0]))) / span


def _steps(t0: float, t1: float, dt: float) -> tuple[int, float]:
    n = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    return n, (t1 - t0) / n


class _HeatOfG:
    """f(t) = heat flow of g, evaluated in one shot from the transform of g."""

    def __init__(self, g: np.ndarray, gamma: float, scheme: str = "spectral"):
        self.g = g
        self.gamma = gamma
        self.ghat = np.fft.rfft2(g)
        n = g.shape[0]
        self.w = -4 * math.pi**2 * gamma * _wave_sq(n, scheme)[:, : n // 2 + 1]

    def __call__(self, t: float) -> np.ndarray:
        if self.gamma == 0 or t == 0:
            return self.g.copy()
        n = self.g.shape[0]
        return np.fft.irfft2(self.ghat * np.exp(self.w * t), s=(n, n))


def _rk4_reaction(s, i, denom, kernel, beta, alpha, h):
    """One RK4 step of s' = -G, i' = G - alpha i.  Returns new (s, i) and the
    stage-weighted mean of i over the step (for the recovered mass)."""

    def rhs(s_, i_):
        g = _infection(s_, i_, denom, kernel, beta)
        return -g, g - alpha * i_

    k1 = rhs(s, i)
    k2 = rhs(s + 0.5 * h * k1[0], i + 0.5 * h * k1[1])
    i2 = i + 0.5 * h * k1[1]
    k3 = rhs(s + 0.5 * h * k2[0], i + 0.5 * h * k2[1])
    i3 = i + 0.5 * h * k2[1]
    i4 = i + h * k3[1]
    k4 = rhs(s + h * k3[0], i4)
    s_new = s + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    i_new = i + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    i_bar = (i + 2 * i2 + 2 * i3 + i4) / 6
    return s_new, i_new, i_bar


def _check_sign(s, i, t):
    lo = min(float(s.min()), float(i.min()))
    if lo < -NEG_TOL:
        raise FloatingPointError(f"density went negative ({lo:.3e}) at t={t:.4f}; reduce dt")
    return lo


def solve(config: PdeConfig) -> PdeSolution:
    """Strang-split solve, returning fields at ``config.output_times``."""
    n = config.n_grid
    s, i, g = initial_fields(config.initial, n)
    heat_g = _HeatOfG(g, config.gamma, config.heat_scheme)
    kernel, beta, alpha, gamma = config.kernel, config.beta, config.alpha, config.gamma
    h2 = 1.0 / n**2

    outs_s, outs_i, outs_f = [], [], []
    step_times, ms, mi, rec = [0.0], [s.sum() * h2], [i.sum() * h2], [0.0]
    lo_val, f_lo, f_hi, excess = _check_sign(s, i, 0.0), float(g.min()), float(g.max()), float((s + i - g).max())
    t = 0.0
    for target in config.output_times:
        if target > t:
            nsteps, dt = _steps(t, target, config.dt)
            for k in range(nsteps):
                t0 = t
                s = heat_step(s, 0.5 * dt, gamma, config.heat_scheme)
                i = heat_step(i, 0.5 * dt, gamma, config.heat_scheme)
                denom = kernel_convolve(heat_g(t0 + 0.5 * dt), kernel)
                s, i, i_bar = _rk4_reaction(s, i, denom, kernel, beta, alpha, dt)
                s = heat_step(s, 0.5 * dt, gamma, config.heat_scheme)
                i = heat_step(i, 0.5 * dt, gamma, config.heat_scheme)
                t = target if k == nsteps - 1 else t0 + dt
                lo_val = min(lo_val, _check_sign(s, i, t))
                f_now = heat_g(t)
                f_lo, f_hi = min(f_lo, float(f_now.min())), max(f_hi, float(f_now.max()))
                excess = max(excess, float((s + i - f_now).max()))
                step_times.append(t)
                ms.append(s.sum() * h2)
                mi.append(i.sum() * h2)
                rec.append(rec[-1] + alpha * dt * i_bar.sum() * h2)
        outs_s.append(s.copy())
        outs_i.append(i.copy())
        outs_f.append(heat_g(t))
    return PdeSolution(
        np.array(config.output_times), np.array(outs_s), np.array(outs_i), np.array(outs_f),
        np.array(step_times), np.array(ms), np.array(mi), np.array(rec),
        lo_val, (f_lo, f_hi), excess, n,
    )


def solve_gamma_zero(config: PdeConfig) -> PdeSolution:
    """Frozen-position limit: f = g for all time, pointwise RK4 with K*g fixed."""
    if config.gamma != 0:
        raise ValueError("solve_gamma_zero requires gamma = 0")
    n = config.n_grid
    s, i, g = initial_fields(config.initial, n)
    beta, alpha = config.beta, config.alpha
    denom = kernel_convolve(g, config.kernel)
    if denom.min() < DENOM_TOL:
        raise FloatingPointError("K*g below tolerance")
    h2 = 1.0 / n**2

    def pressure(i_):
        return beta * kernel_convolve(i_ / denom, config.kernel)

    outs_s, outs_i = [], []
    step_times, ms, mi, rec = [0.0], [s.sum() * h2], [i.sum() * h2], [0.0]
    lo_val, excess = _check_sign(s, i, 0.0), float((s + i - g).max())
    t = 0.0
    for target in config.output_times:
        if target > t:
            nsteps, dt = _steps(t, target, config.dt)
            for k in range(nsteps):
                p1 = pressure(i)
                a1, b1 = -s * p1, s * p1 - alpha * i
                s2, i2 = s + 0.5 * dt * a1, i + 0.5 * dt * b1
                p2 = pressure(i2)
                a2, b2 = -s2 * p2, s2 * p2 - alpha * i2
                s3, i3 = s + 0.5 * dt * a2, i + 0.5 * dt * b2
                p3 = pressure(i3)
                a3, b3 = -s3 * p3, s3 * p3 - alpha * i3
                s4, i4 = s + dt * a3, i + dt * b3
                p4 = pressure(i4)
                a4, b4 = -s4 * p4, s4 * p4 - alpha * i4
                i_bar = (i + 2 * i2 + 2 * i3 + i4) / 6
                s = s + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
                i = i + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
                t = target if k == nsteps - 1 else t + dt
                lo_val = min(lo_val, _check_sign(s, i, t))
                excess = max(excess, float((s + i - g).max()))
                step_times.append(t)
                ms.append(s.sum() * h2)
                mi.append(i.sum() * h2)
                rec.append(rec[-1] + alpha * dt * i_bar.sum() * h2)
        outs_s.append(s.copy())
        outs_i.append(i.copy())
    nt = len(config.output_times)
    return PdeSolution(
        np.array(config.output_times), np.array(outs_s), np.array(outs_i), np.broadcast_to(g, (nt, n, n)).copy(),
        np.array(step_times), np.array(ms), np.array(mi), np.array(rec),
        lo_val, (float(g.min()), float(g.max())), excess, n,
    )


def solve_auto(config: PdeConfig) -> PdeSolution:
    return solve_gamma_zero(config) if config.gamma == 0 else solve(config)


def simpson_mass_defect(sol: PdeSolution, alpha: float) -> float:
    """|dM_S + dM_I + alpha int M_I| at the final time, the integral by composite
    Simpson on the stored step masses (needs an even number of equal steps)."""
    from scipy.integrate import simpson

    integral = simpson(sol.mass_i, x=sol.step_times)
    d = (sol.mass_s[-1] - sol.mass_s[0]) + (sol.mass_i[-1] - sol.mass_i[0]) + alpha * integral
    return abs(float(d))


# --- I/O -------------------------------------------------------------------------------


def write_field(base: Path | str, values: np.ndarray, time: float, name: str = "") -> None:
    """Write ``base.bin`` (row-major little-endian float64) and ``base.json``."""
    base = Path(base)
    values = np.ascontiguousarray(values, dtype="<f8")
    base.with_suffix(".bin").write_bytes(values.tobytes())
    meta = {"schema": FIELD_SCHEMA, "n_grid": int(values.shape[0]), "time": float(time), "name": name}
    base.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_field(base: Path | str) -> tuple[np.ndarray, dict]:
    base = Path(base)
    meta = json.loads(base.with_suffix(".json").read_text())
    n = meta["n_grid"]
    values = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(n, n).copy()
    return values, meta


def field_to_csv(values: np.ndarray, time: float) -> str:
    n = values.shape[0]
    buf = io.StringIO()
    buf.write(f"# schema: {FIELD_SCHEMA} time={time!r} n_grid={n}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "x1", "x2", "value"])
    for a in range(n):
        for b in range(n):
            w.writerow([a, b, repr((a + 0.5) / n), repr((b + 0.5) / n), repr(float(values[a, b]))])
    return buf.getvalue()


def mass(values: np.ndarray) -> float:
    n = values.shape[-1]
    return float(values.sum()) / n**2


def self_convergence_ratio(config: PdeConfig, solver=None) -> float:
    """||u_dt - u_dt/2|| / ||u_dt/2 - u_dt/4|| in sup norm at T (about 4 for second order)."""
    solver = solver or solve_auto
    sols = []
    for div in (1, 2, 4):
        cfg = PdeConfig(
            config.beta, config.alpha, config.gamma, config.kernel, config.initial, config.T,
            config.n_grid, config.dt / div, (config.T,), config.heat_scheme,
        )
        sol = solver(cfg)
        sols.append(np.stack([sol.f_s[-1], sol.f_i[-1]]))
    return float(np.max(np.abs(sols[0] - sols[1])) / np.max(np.abs(sols[1] - sols[2])))
