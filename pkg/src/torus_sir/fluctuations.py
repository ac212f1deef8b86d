"""sqrt(N) fluctuations: initial covariances, empirical fluctuation fields,
martingale bracket checks and a spectral Galerkin integrator for the
linear Gaussian limit.

Coefficients are taken in the L2-orthonormal trigonometric basis of
:mod:`torus_sir.spectral`, so a field F is represented by the vector
``((F, f_k))_k`` and operators by matrices ``A[j, k] = (A f_k, f_j)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .limit_pde import PdeConfig, initial_fields, kernel_convolve, solve_auto
from .simulator import (
    INFECTED,
    SUSCEPTIBLE,
    InitialCondition,
    MartingaleTrack,
    SimConfig,
    Snapshot,
    WeightedPoints,
    cell_centres,
    empirical_measures,
    replicate_rng,
    sample_initial,
)
from .spectral import S_DYNAMIC, SpectralField, TestFunction, _cached_basis, grid_inner_products, h_neg_s_norm
from .torus import KernelSpec

PSD_TOL = 1e-10
DEFAULT_GALERKIN_CUTOFF = 16
REFRESH_STEPS = 10

TestLike = TestFunction | Callable | np.ndarray


def _on_grid(phi: TestLike, n_grid: int) -> np.ndarray:
    if isinstance(phi, np.ndarray):
        if phi.shape != (n_grid, n_grid):
            raise ValueError(f"grid test function has shape {phi.shape}, expected {(n_grid, n_grid)}")
        return phi
    if isinstance(phi, TestFunction):
        return phi.on_grid(n_grid)
    pts = cell_centres(n_grid).reshape(-1, 2)
    return np.asarray(phi(pts), dtype=float).reshape(n_grid, n_grid)


def _quad(values: np.ndarray) -> float:
    return float(values.sum()) / values.size


# --- initial covariances ---------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceReport:
    """Limit covariance of ((U_0, phi), (V_0, psi), (Z_0, phi2))."""

    alpha_p: float
    beta_p: float
    sigma_sq: float
    gamma_p: float
    eta_p: float
    lambda_p: float

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.alpha_p, self.gamma_p, self.eta_p],
            [self.gamma_p, self.beta_p, self.lambda_p],
            [self.eta_p, self.lambda_p, self.sigma_sq],
        ])

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        return bool(np.linalg.eigvalsh(self.matrix()).min() >= -tol)

    def entries(self) -> dict[str, float]:
        return dict(self.__dict__)


# (row, col) of each named entry in the 3x3 matrix
COVARIANCE_ENTRIES = {
    "alpha_p": (0, 0), "beta_p": (1, 1), "sigma_sq": (2, 2),
    "gamma_p": (0, 1), "eta_p": (0, 2), "lambda_p": (1, 2),
}


def initial_covariances(
    phi: TestLike, psi: TestLike, phi2: TestLike, initial: InitialCondition, n_grid: int = 128
) -> CovarianceReport:
    """Closed-form covariances of the initial fluctuations by grid quadrature.

    Each agent contributes ``a = [(1 - xi) 1_A + 1_{A^c}](X) phi(X)`` to U,
    ``b = xi 1_A(X) psi(X)`` to V and ``c = phi2(X)`` to Z, with X ~ g and
    xi ~ Bernoulli(p).  Since ``a b = 0`` the U-V covariance is ``-E a E b``.
    """
    if n_grid < 128:
        raise ValueError("quadrature grid must have at least 128 cells per side")
    phi, psi, phi2 = (_on_grid(f, n_grid) for f in (phi, psi, phi2))
    f_s, f_i, g = initial_fields(initial, n_grid)
    p = initial.p
    # f_i = p 1_A g, so 1_A g = f_i / p when p > 0
    a_g = f_i / p if p > 0 else np.zeros_like(g)
    e_a = _quad(f_s * phi)
    e_b = p * _quad(a_g * psi)
    e_c = _quad(g * phi2)
    return CovarianceReport(
        alpha_p=_quad(f_s * phi * phi) - e_a**2,
        beta_p=p * _quad(a_g * psi * psi) - e_b**2,
        sigma_sq=_quad(g * phi2 * phi2) - e_c**2,
        gamma_p=-e_a * e_b,
        eta_p=_quad(f_s * phi * phi2) - e_a * e_c,
        lambda_p=p * _quad(a_g * psi * phi2) - e_b * e_c,
    )


@dataclass
class MonteCarloCovariance:
    samples: np.ndarray  # (M, 3): (U_0, phi), (V_0, psi), (Z_0, phi2)
    cov: np.ndarray
    se: np.ndarray

    def compare(self, report: CovarianceReport) -> list[dict]:
        target = report.matrix()
        rows = []
        for name, (a, b) in COVARIANCE_ENTRIES.items():
            est, se, pred = float(self.cov[a, b]), float(self.se[a, b]), float(target[a, b])
            rows.append({"quantity": name, "estimate": est, "se": se, "predicted": pred, "z_score": _z(est - pred, se)})
        return rows


def _z(diff: float, se: float) -> float:
    if se > 0:
        return diff / se
    return 0.0 if diff == 0 else math.copysign(math.inf, diff)


def initial_pairings(config: SimConfig, phi: TestLike, psi: TestLike, phi2: TestLike, replicate: int) -> np.ndarray:
    """((U_0^N, phi), (V_0^N, psi), (Z_0^N, phi2)) for one sampled initial population."""
    pop = sample_initial(config, replicate_rng(config.seed, replicate))
    n = config.N
    f_s, f_i, g = initial_fields(config.initial, config.initial.density.n_grid)
    out = np.empty(3)
    for k, (fn, sel, ref) in enumerate((
        (phi, pop.state == SUSCEPTIBLE, f_s),
        (psi, pop.state == INFECTED, f_i),
        (phi2, np.ones(n, dtype=bool), g),
    )):
        out[k] = math.sqrt(n) * (_eval_points(fn, pop.pos[sel]).sum() / n - _quad(_on_grid(fn, ref.shape[0]) * ref))
    return out


def _eval_points(fn: TestLike, pts: np.ndarray) -> np.ndarray:
    if len(pts) == 0:
        return np.zeros(0)
    if isinstance(fn, np.ndarray):
        n = fn.shape[0]
        idx = np.minimum((pts * n).astype(np.int64), n - 1)
        return fn[idx[:, 0], idx[:, 1]]
    return np.asarray(fn(pts), dtype=float)


def mc_initial_clt(
    config: SimConfig,
    replicates: int,
    phi: TestLike,
    psi: TestLike,
    phi2: TestLike,
    n_bootstrap: int = 200,
    min_replicates: int = 1000,
) -> MonteCarloCovariance:
    """Sample covariance of the initial pairings over independent populations.

    Standard errors come from a nonparametric bootstrap over replicates.
    """
    if replicates < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates")
    samples = np.array([initial_pairings(config, phi, psi, phi2, r) for r in range(replicates)])
    cov = np.cov(samples, rowvar=False)
    rng = replicate_rng(config.seed, 2**31)
    boot = np.empty((n_bootstrap, 3, 3))
    for b in range(n_bootstrap):
        boot[b] = np.cov(samples[rng.integers(0, replicates, replicates)], rowvar=False)
    return MonteCarloCovariance(samples, cov, boot.std(axis=0, ddof=1))


# --- fluctuation fields ----------------------------------------------------------------


@dataclass
class FluctuationField:
    """scale * (sum_j w_j delta_{X_j} - ref dx) with ref a cell-centred grid density."""

    points: np.ndarray
    weights: np.ndarray
    reference: np.ndarray
    scale: float

    def pair(self, phi: TestLike) -> float:
        emp = float(self.weights @ _eval_points(phi, self.points)) if len(self.points) else 0.0
        det = _quad(_on_grid(phi, self.reference.shape[0]) * self.reference)
        return self.scale * (emp - det)

    def project(self, cutoff: int = 32, gamma: float = 1.0) -> SpectralField:
        basis = _cached_basis(cutoff)
        coeffs = basis.measure_coefficients(self.points, self.weights) - grid_inner_products(self.reference, cutoff)
        return SpectralField(gamma, cutoff, self.scale * coeffs, basis)

    def norm(self, s: float = S_DYNAMIC, cutoff: int = 32, gamma: float = 1.0) -> float:
        return h_neg_s_norm(self.project(cutoff, gamma), s)


def empirical_fluctuation(measure: WeightedPoints, reference: np.ndarray, n_agents: int) -> FluctuationField:
    """sqrt(N) (empirical - reference) for an empirical measure with 1/N atoms."""
    return FluctuationField(
        np.asarray(measure.points, dtype=float).reshape(-1, 2),
        np.asarray(measure.weights, dtype=float),
        np.asarray(reference, dtype=float),
        math.sqrt(n_agents),
    )


def fluctuation_fields(snap: Snapshot, f_s: np.ndarray, f_i: np.ndarray, f: np.ndarray) -> dict[str, FluctuationField]:
    """U, V and Z of a snapshot against limit densities at the same time."""
    meas = empirical_measures(snap)
    n = len(snap.state)
    return {
        "U": empirical_fluctuation(meas["S"], f_s, n),
        "V": empirical_fluctuation(meas["I"], f_i, n),
        "Z": empirical_fluctuation(meas["N"], f, n),
    }


# --- martingale bracket check ----------------------------------------------------------


def qv_check(tracks: Sequence[MartingaleTrack], times: Optional[Sequence[float]] = None) -> list[dict]:
    """Compare realised squares (and the M-L product) with predicted brackets.

    For each martingale X and time t the replicate mean of X_t^2 is the
    estimate and the mean bracket the prediction; the standard error is that
    of the per-replicate difference X_t^2 - <X>_t.
    """
    if not tracks:
        raise ValueError("no tracks supplied")
    arrays = [t.as_arrays() for t in tracks]
    all_times = arrays[0]["times"]
    times = all_times if times is None else times
    rows = []
    for t in times:
        k = int(np.flatnonzero(np.isclose(all_times, t, rtol=0, atol=1e-12))[0])
        for name, value, bracket in (
            ("M", lambda a: a["M"] ** 2, "qv_M"),
            ("L", lambda a: a["L"] ** 2, "qv_L"),
            ("H", lambda a: a["H"] ** 2, "qv_H"),
            ("ML", lambda a: a["M"] * a["L"], "qv_ML"),
        ):
            real = np.array([value(a)[k] for a in arrays])
            pred = np.array([a[bracket][k] for a in arrays])
            diff = real - pred
            se = float(diff.std(ddof=1) / math.sqrt(len(diff))) if len(diff) > 1 else math.nan
            rows.append({
                "quantity": name, "time": float(t),
                "estimate": float(real.mean()), "se": se,
                "predicted": float(pred.mean()), "z_score": _z(float(diff.mean()), se),
            })
    return rows


# --- Galerkin operators ----------------------------------------------------------------


@lru_cache(maxsize=8)
def _basis_on_grid(cutoff: int, n_grid: int) -> np.ndarray:
    return _cached_basis(cutoff).grid_values(n_grid)


def multiplication_matrix(c: np.ndarray, cutoff: int) -> np.ndarray:
    """Mult(c)[j, k] = (c f_k, f_j) by grid quadrature (symmetric)."""
    F = _basis_on_grid(cutoff, c.shape[0])
    m = grid_inner_products(c[None] * F, cutoff)
    return 0.5 * (m + m.T)


def gradient_covariance(c: np.ndarray, cutoff: int) -> np.ndarray:
    """Q[j, k] = int c grad f_j . grad f_k, via the closed-form derivative matrices."""
    mult = multiplication_matrix(c, cutoff)
    d1, d2 = _cached_basis(cutoff).derivative_matrices()
    q = d1.T @ mult @ d1 + d2.T @ mult @ d2
    return 0.5 * (q + q.T)


@dataclass
class OperatorSet:
    """Matrices of the three linearised infection operators at one time."""

    si: np.ndarray
    i: np.ndarray
    s: np.ndarray


def _pressure_field(f_i: np.ndarray, denom: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    return kernel_convolve(f_i / denom, kernel)


def _denominator(f: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    denom = kernel_convolve(f, kernel)
    if denom.min() < 1e-12:
        raise FloatingPointError("kernel-smoothed density vanishes; operators undefined")
    return denom


def assemble_operators(f_s: np.ndarray, f_i: np.ndarray, f: np.ndarray, kernel: KernelSpec, cutoff: int) -> OperatorSet:
    """Matrices (G phi_k, phi_j) of

    * G_si phi = K * ( f_I K*(f_S phi) / (K*f)^2 )
    * G_i  phi = phi K*(f_I / K*f)
    * G_s  phi = K*(f_S phi) / K*f
    """
    n = f.shape[0]
    if n <= 2 * cutoff or n % 4:
        raise ValueError(f"grid {n} too coarse for cutoff {cutoff}")
    F = _basis_on_grid(cutoff, n)
    denom = _denominator(f, kernel)
    smoothed = kernel_convolve(f_s[None] * F, kernel)  # K*(f_S f_k)
    g_s = smoothed / denom
    g_si = kernel_convolve(f_i * g_s / denom, kernel)
    # rows of grid_inner_products index k (input), columns j (output): transpose
    return OperatorSet(
        si=grid_inner_products(g_si, cutoff).T,
        i=multiplication_matrix(_pressure_field(f_i, denom, kernel), cutoff),
        s=grid_inner_products(g_s, cutoff).T,
    )


@dataclass
class NoiseCovariances:
    """Per-unit-time covariances of the independent noise sources.

    Brownian motion of S, I, R agents and the infection / recovery jumps.
    The limit noises combine as dZ = B_S + B_I + B_R, dW1 = B_S - A,
    dW2 = B_I + A - C.
    """

    brown_s: np.ndarray
    brown_i: np.ndarray
    brown_r: np.ndarray
    infection: np.ndarray
    recovery: np.ndarray

    def roots(self) -> "NoiseCovariances":
        return NoiseCovariances(*(psd_sqrt(q) for q in self.__dict__.values()))


def noise_covariances(
    f_s: np.ndarray, f_i: np.ndarray, f: np.ndarray, kernel: KernelSpec, cutoff: int,
    beta: float, alpha: float, gamma: float,
) -> NoiseCovariances:
    m = len(_cached_basis(cutoff))
    zero = np.zeros((m, m))
    f_r = np.maximum(f - f_s - f_i, 0.0)
    brown = [2 * gamma * gradient_covariance(c, cutoff) if gamma > 0 else zero for c in (f_s, f_i, f_r)]
    infection = zero
    if beta > 0:
        infection = beta * multiplication_matrix(f_s * _pressure_field(f_i, _denominator(f, kernel), kernel), cutoff)
    recovery = alpha * multiplication_matrix(f_i, cutoff) if alpha > 0 else zero
    return NoiseCovariances(*brown, infection, recovery)


def psd_sqrt(q: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """L with L L^T = q, eigenvalues below zero clipped (warns past -tol)."""
    q = 0.5 * (q + q.T)
    w, v = np.linalg.eigh(q)
    if w.size and w.min() < -tol * max(1.0, float(np.abs(w).max())):
        warnings.warn(f"covariance not PSD (min eigenvalue {w.min():.3e}); clipping", RuntimeWarning)
    return v * np.sqrt(np.clip(w, 0.0, None))


# --- Galerkin integrators --------------------------------------------------------------


@dataclass
class GalerkinState:
    cutoff: int
    z: np.ndarray  # (paths, m)
    u: np.ndarray
    v: np.ndarray
    t: float
    rng: np.random.Generator = field(repr=False)


@dataclass
class GalerkinPaths:
    """Coefficient paths at recorded times, arrays of shape (times, paths, m)."""

    cutoff: int
    times: np.ndarray
    z: np.ndarray
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def pairing(self, name: str, phi: TestFunction) -> np.ndarray:
        """(X_t, phi) for every recorded time and path, shape (times, paths)."""
        coeffs = phi.coefficients(_cached_basis(self.cutoff))
        return getattr(self, name) @ coeffs


def initial_coefficient_covariance(initial: InitialCondition, cutoff: int, n_grid: int = 128) -> np.ndarray:
    """Covariance of the limit (Z_0, U_0, V_0) coefficients, shape (3m, 3m).

    Per agent the coefficient vector is (f_k(X), s f_k(X), i f_k(X)) with s, i
    the initial class indicators; blocks follow from E[s f_j f_k] = (f_S(0) f_k, f_j).
    """
    f_s, f_i, g = initial_fields(initial, n_grid)
    dens = (g, f_s, f_i)
    means = [grid_inner_products(d, cutoff) for d in dens]
    m = len(means[0])
    cov = np.zeros((3 * m, 3 * m))
    # E[x_a x_b f_j f_k]: z*z -> g, z*u -> f_s, z*v -> f_i, u*u -> f_s, u*v -> 0, v*v -> f_i
    second = {(0, 0): g, (0, 1): f_s, (0, 2): f_i, (1, 1): f_s, (1, 2): None, (2, 2): f_i}
    for (a, b), c in second.items():
        block = (multiplication_matrix(c, cutoff) if c is not None else 0.0) - np.outer(means[a], means[b])
        cov[a * m:(a + 1) * m, b * m:(b + 1) * m] = block
        cov[b * m:(b + 1) * m, a * m:(a + 1) * m] = block.T
    return 0.5 * (cov + cov.T)


def sample_initial_coefficients(cov: np.ndarray, paths: int, rng: np.random.Generator) -> tuple[np.ndarray, ...]:
    root = psd_sqrt(cov)
    x = rng.standard_normal((paths, root.shape[1])) @ root.T
    m = cov.shape[0] // 3
    return x[:, :m], x[:, m:2 * m], x[:, 2 * m:]


def _step_grid(T: float, dt: float, record_times: Sequence[float]) -> tuple[int, float, set[int]]:
    nsteps = max(1, round(T / dt))
    dt = T / nsteps
    marks = set()
    for t in record_times:
        k = round(t / dt)
        if abs(k * dt - t) > 1e-9 or not 0 <= k <= nsteps:
            raise ValueError(f"record time {t} is not on the step grid (dt={dt})")
        marks.add(k)
    return nsteps, dt, marks


def _block_midpoints(nsteps: int, dt: float, refresh: int) -> list[float]:
    return [min(b + 0.5 * refresh, nsteps) * dt for b in range(0, nsteps, refresh)]


def limit_fields(config: PdeConfig, times: Sequence[float]) -> list[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(f_S, f_I, f) at the given times from one PDE solve."""
    ts = sorted({round(float(t), 12) for t in times})
    cfg = PdeConfig(
        config.beta, config.alpha, config.gamma, config.kernel, config.initial,
        max(ts[-1], config.dt), config.n_grid, config.dt, tuple(ts), config.heat_scheme,
    )
    sol = solve_auto(cfg)
    lookup = {t: sol.fields_at(t) for t in ts}
    return [lookup[round(float(t), 12)] for t in times]


def galerkin_solve_Z(
    z0: np.ndarray,
    config: PdeConfig,
    T: float,
    dt: float,
    rng: np.random.Generator,
    record_times: Sequence[float] = (),
    cutoff: int = DEFAULT_GALERKIN_CUTOFF,
    refresh: int = REFRESH_STEPS,
) -> GalerkinPaths:
    """Exponential Euler for dZ = gamma Lap Z dt + dH, Cov(dH) = 2 gamma (f grad f_j . grad f_k) dt.

    ``z0`` has shape (paths, m) or (m,).  The noise covariance is evaluated at
    the midpoint of each block of ``refresh`` steps.
    """
    z = np.array(np.atleast_2d(z0), dtype=float)
    basis = _cached_basis(cutoff)
    if z.shape[1] != len(basis):
        raise ValueError("initial coefficients do not match the cutoff")
    record_times = tuple(record_times) or (T,)
    nsteps, dt, marks = _step_grid(T, dt, record_times)
    out = []
    if 0 in marks:
        out.append(z.copy())
    gamma = config.gamma
    if gamma == 0:
        for k in sorted(marks - {0}):
            out.append(z.copy())
        return GalerkinPaths(cutoff, np.array(sorted(marks)) * dt, np.array(out))
    decay = np.exp(-basis.eigenvalues(gamma) * dt)
    mids = _block_midpoints(nsteps, dt, refresh)
    fields = limit_fields(config, mids)
    root = None
    for k in range(nsteps):
        if k % refresh == 0:
            f = fields[k // refresh][2]
            root = psd_sqrt(2 * gamma * gradient_covariance(f, cutoff))
        noise = rng.standard_normal(z.shape) @ root.T * math.sqrt(dt)
        z = decay * (z + noise)
        if k + 1 in marks:
            out.append(z.copy())
    return GalerkinPaths(cutoff, np.array(sorted(marks)) * dt, np.array(out))


def galerkin_solve_UV(
    config: PdeConfig,
    paths: int,
    T: float,
    dt: float,
    rng: np.random.Generator,
    record_times: Sequence[float] = (),
    cutoff: int = DEFAULT_GALERKIN_CUTOFF,
    refresh: int = REFRESH_STEPS,
    initial: Optional[tuple[np.ndarray, np.ndarray, np.ndarray]] = None,
) -> GalerkinPaths:
    """Joint exponential Euler for (Z, U, V).

    Drift (coefficient form, heat part handled by the exponential factor)::

        du = beta (G_si^T z - G_i^T u - G_s^T v) dt + dW1
        dv = -beta (G_si^T z - G_i^T u - G_s^T v) dt - alpha v dt + dW2

    Z is advanced alongside because its noise shares the Brownian parts of
    W1 and W2.  With gamma = 0 the heat factors are 1 and Z stays at Z_0.
    ``initial`` overrides the Gaussian initial law as (z0, u0, v0).
    """
    basis = _cached_basis(cutoff)
    m = len(basis)
    if initial is None:
        cov0 = initial_coefficient_covariance(config.initial, cutoff, config.n_grid)
        z, u, v = sample_initial_coefficients(cov0, paths, rng)
    else:
        z, u, v = (np.array(np.broadcast_to(np.atleast_2d(x), (paths, m)), dtype=float) for x in initial)
    record_times = tuple(record_times) or (T,)
    nsteps, dt, marks = _step_grid(T, dt, record_times)
    beta, alpha, gamma = config.beta, config.alpha, config.gamma
    decay = np.exp(-basis.eigenvalues(gamma) * dt)
    mids = _block_midpoints(nsteps, dt, refresh)
    fields = limit_fields(config, mids)
    state = GalerkinState(cutoff, z, u, v, 0.0, rng)
    rec = {"z": [], "u": [], "v": []}

    def record():
        for name in rec:
            rec[name].append(getattr(state, name).copy())

    if 0 in marks:
        record()
    sq = math.sqrt(dt)
    ops = roots = None
    for k in range(nsteps):
        if k % refresh == 0:
            f_s, f_i, f = fields[k // refresh]
            ops = assemble_operators(f_s, f_i, f, config.kernel, cutoff)
            roots = noise_covariances(f_s, f_i, f, config.kernel, cutoff, beta, alpha, gamma).roots()
        z, u, v = state.z, state.u, state.v
        shape = u.shape

        def draw(root):
            return rng.standard_normal(shape) @ root.T * sq

        a = draw(roots.infection) if beta > 0 else 0.0
        c = draw(roots.recovery) if alpha > 0 else 0.0
        if beta > 0:
            flow = beta * (z @ ops.si - u @ ops.i - v @ ops.s) * dt
        else:
            flow = 0.0
        if gamma > 0:
            bs, bi, br = draw(roots.brown_s), draw(roots.brown_i), draw(roots.brown_r)
            state.u = decay * (u + flow + bs - a)
            state.v = decay * (v - flow - alpha * dt * v + bi + a - c)
            state.z = decay * (z + bs + bi + br)
        else:
            state.u = u + flow - a
            state.v = v - flow - alpha * dt * v + a - c
        state.t = (k + 1) * dt
        if k + 1 in marks:
            record()
    return GalerkinPaths(cutoff, np.array(sorted(marks)) * dt, *(np.array(rec[n]) for n in ("z", "u", "v")))


def z_variance_exact(phi: TestLike, f: np.ndarray) -> float:
    """Var((Z_t, phi)) = (f, phi^2) - (f, phi)^2: agents move independently of their states."""
    ph = _on_grid(phi, f.shape[0])
    return _quad(f * ph * ph) - _quad(f * ph) ** 2


def report_rows(name: str, estimate: float, se: float, predicted: float) -> dict:
    return {"quantity": name, "estimate": estimate, "se": se, "predicted": predicted, "z_score": _z(estimate - predicted, se)}
