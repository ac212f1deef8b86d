"""Geometry of the flat unit torus and the compactly supported interaction kernel."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numba
import numpy as np

MAX_DISTANCE = math.sqrt(0.5)
MIN_CELL = 1.0 / 64.0


class TorusPoint(NamedTuple):
    x1: float
    x2: float


def wrap(raw) -> TorusPoint:
    """Reduce a pair of reals into [0, 1)^2."""
    a, b = float(raw[0]), float(raw[1])
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError(f"non-finite coordinates: {raw!r}")
    return TorusPoint(_mod1(a), _mod1(b))


def _mod1(v: float) -> float:
    r = v % 1.0
    # -1e-20 % 1.0 == 1.0 in floating point
    return 0.0 if r >= 1.0 else r


def wrap_array(pos: np.ndarray) -> np.ndarray:
    """Vectorised wrap of an (..., 2) array, in place when possible."""
    pos = np.asarray(pos, dtype=float)
    if not np.all(np.isfinite(pos)):
        raise ValueError("non-finite coordinates")
    np.mod(pos, 1.0, out=pos)
    pos[pos >= 1.0] = 0.0
    return pos


def torus_delta(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-coordinate shortest displacement magnitude, min(|d|, 1-|d|)."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.mod(d, 1.0)
    return np.minimum(d, 1.0 - d)


def torus_distance_sq(a, b) -> np.ndarray:
    d = torus_delta(a, b)
    return np.sum(d * d, axis=-1)


def torus_distance(a, b):
    """Geodesic distance on the unit torus. Broadcasts over leading axes."""
    out = np.sqrt(torus_distance_sq(a, b))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class KernelSpec:
    """Kernel K(x, y) = k(d(x, y)^2) with k(u) = amplitude * (1 - u/R^2)_+^m.

    ``mode="constant"`` gives K = amplitude everywhere. It breaks the compact
    support assumption and exists only for the well-mixed reduction check.
    """

    radius: float = 0.2
    exponent: int = 4
    amplitude: float = 1.0
    mode: str = "bump"

    def __post_init__(self):
        if self.mode not in ("bump", "constant"):
            raise ValueError(f"unknown kernel mode {self.mode!r}")
        if not (0.0 < self.radius < 0.5):
            raise ValueError("kernel radius must lie in (0, 1/2)")
        if int(self.exponent) != self.exponent or self.exponent < 4:
            raise ValueError("kernel exponent must be an integer >= 4")
        if not self.amplitude > 0:
            raise ValueError("kernel amplitude must be positive")
        object.__setattr__(self, "exponent", int(self.exponent))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "amplitude", float(self.amplitude))

    @property
    def is_constant(self) -> bool:
        return self.mode == "constant"

    @property
    def lipschitz_profile(self) -> float:
        """Lipschitz constant of u -> k(u); the maximum slope is at u = 0."""
        if self.is_constant:
            return 0.0
        return self.amplitude * self.exponent / self.radius**2

    def profile(self, u) -> np.ndarray:
        """k(u) for squared distances u."""
        u = np.asarray(u, dtype=float)
        if self.is_constant:
            return np.full(u.shape, self.amplitude)
        base = np.clip(1.0 - u / self.radius**2, 0.0, None)
        return self.amplitude * base**self.exponent

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        unknown = set(d) - {"radius", "exponent", "amplitude", "mode"}
        if unknown:
            raise ValueError(f"unknown kernel fields: {sorted(unknown)}")
        return cls(**d)


def kernel_eval(spec: KernelSpec, a, b):
    """K(a, b); broadcasts over leading axes of point arrays."""
    out = spec.profile(torus_distance_sq(a, b))
    return float(out) if out.ndim == 0 else out


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense K(a_i, b_j), shape (len(a), len(b))."""
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    return spec.profile(torus_distance_sq(a[:, None, :], b[None, :, :]))


def kernel_column_sums_bruteforce(spec: KernelSpec, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("empty point list")
    return kernel_matrix(spec, pts, pts).sum(axis=0)


def kernel_column_sums(spec: KernelSpec, points) -> np.ndarray:
    """sum_l K(X_l, X_j) for every j, scanning only neighbouring grid cells.

    Cells have side at least max(R, 1/64), so any pair within the support
    radius sits in the same or an adjacent cell.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 2))
    n = len(pts)
    if n == 0:
        raise ValueError("empty point list")
    if spec.is_constant:
        return np.full(n, spec.amplitude * n)
    ncell = int(math.floor(1.0 / max(spec.radius, MIN_CELL)))
    if ncell < 3:
        # 3x3 neighbourhood would wrap onto itself
        return kernel_column_sums_bruteforce(spec, pts)
    order, starts = _bucket(pts, ncell)
    return _binned_sums(pts, order, starts, ncell, spec.radius**2, spec.exponent, spec.amplitude)


def _bucket(pts: np.ndarray, ncell: int):
    cx = np.minimum((pts[:, 0] * ncell).astype(np.int64), ncell - 1)
    cy = np.minimum((pts[:, 1] * ncell).astype(np.int64), ncell - 1)
    cell = cx * ncell + cy
    order = np.argsort(cell, kind="stable")
    starts = np.searchsorted(cell[order], np.arange(ncell * ncell + 1))
    return order.astype(np.int64), starts.astype(np.int64)


@numba.njit(cache=True)
def _profile_scalar(u, r2, m, amp):
    if u >= r2:
        return 0.0
    return amp * (1.0 - u / r2) ** m


@numba.njit(cache=True)
def _dist_sq(ax, ay, bx, by):
    dx = abs(ax - bx)
    dx = min(dx, 1.0 - dx)
    dy = abs(ay - by)
    dy = min(dy, 1.0 - dy)
    return dx * dx + dy * dy


@numba.njit(cache=True)
def _binned_sums(pts, order, starts, ncell, r2, m, amp):
    n = pts.shape[0]
    out = np.zeros(n)
    for cx in range(ncell):
        for cy in range(ncell):
            c = cx * ncell + cy
            for a in range(starts[c], starts[c + 1]):
                j = order[a]
                acc = 0.0
                for ox in range(-1, 2):
                    for oy in range(-1, 2):
                        nc = ((cx + ox) % ncell) * ncell + (cy + oy) % ncell
                        for b in range(starts[nc], starts[nc + 1]):
                            l = order[b]
                            acc += _profile_scalar(
                                _dist_sq(pts[l, 0], pts[l, 1], pts[j, 0], pts[j, 1]), r2, m, amp
                            )
                out[j] = acc
    return out


@numba.njit(cache=True)
def _pressure_binned(pos, state, order, starts, ncell, r2, m, amp):
    n = pos.shape[0]
    out = np.zeros(n)
    for j in range(n):
        if state[j] != 1:
            continue
        cx = min(int(pos[j, 0] * ncell), ncell - 1)
        cy = min(int(pos[j, 1] * ncell), ncell - 1)
        colsum = 0.0
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                nc = ((cx + ox) % ncell) * ncell + (cy + oy) % ncell
                for b in range(starts[nc], starts[nc + 1]):
                    l = order[b]
                    colsum += _profile_scalar(_dist_sq(pos[l, 0], pos[l, 1], pos[j, 0], pos[j, 1]), r2, m, amp)
        for ox in range(-1, 2):
            for oy in range(-1, 2):
                nc = ((cx + ox) % ncell) * ncell + (cy + oy) % ncell
                for b in range(starts[nc], starts[nc + 1]):
                    i = order[b]
                    if state[i] == 0:
                        out[i] += _profile_scalar(_dist_sq(pos[i, 0], pos[i, 1], pos[j, 0], pos[j, 1]), r2, m, amp) / colsum
    return out


def infection_pressure(spec: KernelSpec, pos: np.ndarray, state: np.ndarray) -> np.ndarray:
    """Per-agent sum_{j infected} K(X_i, X_j) / sum_l K(X_l, X_j); zero for non-susceptibles."""
    pos = np.ascontiguousarray(pos, dtype=float)
    state = np.asarray(state)
    if spec.is_constant:
        # every ratio is 1/N
        return np.where(state == 0, np.count_nonzero(state == 1) / len(state), 0.0)
    ncell = int(math.floor(1.0 / max(spec.radius, MIN_CELL)))
    if ncell < 3:
        k = kernel_matrix(spec, pos, pos[state == 1])
        return np.where(state == 0, k @ (1.0 / k_colsums(spec, pos, pos[state == 1])), 0.0)
    order, starts = _bucket(pos, ncell)
    return _pressure_binned(
        pos, np.ascontiguousarray(state, dtype=np.int8), order, starts, ncell, spec.radius**2, spec.exponent, spec.amplitude
    )


def k_colsums(spec: KernelSpec, pos: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """sum_l K(X_l, y) for each target y."""
    return kernel_matrix(spec, pos, targets).sum(axis=0)


def kernel_on_offsets(spec: KernelSpec, n_grid: int) -> np.ndarray:
    """K evaluated at the periodic grid offsets (i h, j h), h = 1/n_grid."""
    off = np.arange(n_grid) / n_grid
    off = np.minimum(off, 1.0 - off)
    d2 = off[:, None] ** 2 + off[None, :] ** 2
    return spec.profile(d2)
