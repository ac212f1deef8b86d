"""Laplacian eigenbasis on the unit torus, Sobolev norms, heat semigroup.

The basis uses even wave numbers ``n`` with trigonometric factors
``sin/cos(pi * n * x)``, i.e. integer frequencies ``n / 2``.  Families:

====== ===================================== ==================
family function                               index constraint
====== ===================================== ==================
0      1                                      n1 = n2 = 0
1      2 sin(pi n1 x1) cos(pi n2 x2)          n1 > 0, n2 > 0
2      2 sin(pi n1 x1) sin(pi n2 x2)          n1 > 0, n2 > 0
3      2 cos(pi n1 x1) cos(pi n2 x2)          n1 > 0, n2 > 0
4      2 cos(pi n1 x1) sin(pi n2 x2)          n1 > 0, n2 > 0
5      sqrt2 cos(pi n1 x1)                    n1 > 0, n2 = 0
6      sqrt2 sin(pi n1 x1)                    n1 > 0, n2 = 0
7      sqrt2 cos(pi n2 x2)                    n1 = 0, n2 > 0
8      sqrt2 sin(pi n2 x2)                    n1 = 0, n2 > 0
====== ===================================== ==================
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)
DEFAULT_CUTOFF = 32
S_INITIAL = 1.5
S_DYNAMIC = 2.5


class BasisIndex(NamedTuple):
    family: int
    n1: int
    n2: int

    def validate(self) -> "BasisIndex":
        f, n1, n2 = self
        if f not in range(9):
            raise ValueError(f"family must be in 0..8, got {f}")
        if n1 < 0 or n2 < 0 or n1 % 2 or n2 % 2:
            raise ValueError(f"wave numbers must be even and non-negative, got {n1}, {n2}")
        ok = {
            0: n1 == 0 and n2 == 0,
            5: n1 > 0 and n2 == 0,
            6: n1 > 0 and n2 == 0,
            7: n1 == 0 and n2 > 0,
            8: n1 == 0 and n2 > 0,
        }.get(f, n1 > 0 and n2 > 0)
        if not ok:
            raise ValueError(f"invalid index {tuple(self)}")
        return self


def enumerate_basis(cutoff: int) -> list[BasisIndex]:
    """All indices with n1, n2 <= cutoff, in a fixed canonical order."""
    if cutoff < 0 or cutoff % 2:
        raise ValueError("cutoff must be an even non-negative integer")
    out = [BasisIndex(0, 0, 0)]
    for n in range(2, cutoff + 1, 2):
        out += [BasisIndex(5, n, 0), BasisIndex(6, n, 0), BasisIndex(7, 0, n), BasisIndex(8, 0, n)]
    for n1 in range(2, cutoff + 1, 2):
        for n2 in range(2, cutoff + 1, 2):
            out += [BasisIndex(f, n1, n2) for f in (1, 2, 3, 4)]
    return out


class Basis:
    """A truncated basis with vectorised evaluation, gradients and Laplacians."""

    def __init__(self, cutoff: int = DEFAULT_CUTOFF, indices: Sequence[BasisIndex] | None = None):
        self.cutoff = cutoff
        self.indices = enumerate_basis(cutoff) if indices is None else [BasisIndex(*i).validate() for i in indices]
        arr = np.array(self.indices, dtype=np.int64)
        self.family = arr[:, 0]
        self.n1 = arr[:, 1]
        self.n2 = arr[:, 2]
        self._pos = {idx: k for k, idx in enumerate(self.indices)}

    def __len__(self) -> int:
        return len(self.indices)

    def position(self, idx) -> int:
        return self._pos[BasisIndex(*idx)]

    def wave_sq(self) -> np.ndarray:
        return (self.n1**2 + self.n2**2).astype(float)

    def eigenvalues(self, gamma: float) -> np.ndarray:
        return gamma * math.pi**2 * self.wave_sq()

    def _factors(self, pts: np.ndarray):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        a1 = math.pi * pts[:, :1] * self.n1[None, :]
        a2 = math.pi * pts[:, 1:] * self.n2[None, :]
        return np.sin(a1), np.cos(a1), np.sin(a2), np.cos(a2)

    def values(self, pts: np.ndarray) -> np.ndarray:
        """Basis values at points, shape (P, m)."""
        s1, c1, s2, c2 = self._factors(pts)
        return self._combine(s1, c1, s2, c2)

    def _combine(self, s1, c1, s2, c2):
        f = self.family
        out = np.empty_like(s1)
        sel = [f == k for k in range(9)]
        out[:, sel[0]] = 1.0
        out[:, sel[1]] = 2 * s1[:, sel[1]] * c2[:, sel[1]]
        out[:, sel[2]] = 2 * s1[:, sel[2]] * s2[:, sel[2]]
        out[:, sel[3]] = 2 * c1[:, sel[3]] * c2[:, sel[3]]
        out[:, sel[4]] = 2 * c1[:, sel[4]] * s2[:, sel[4]]
        out[:, sel[5]] = SQRT2 * c1[:, sel[5]]
        out[:, sel[6]] = SQRT2 * s1[:, sel[6]]
        out[:, sel[7]] = SQRT2 * c2[:, sel[7]]
        out[:, sel[8]] = SQRT2 * s2[:, sel[8]]
        return out

    def gradients(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form partial derivatives, each of shape (P, m)."""
        s1, c1, s2, c2 = self._factors(pts)
        k1 = math.pi * self.n1[None, :]
        k2 = math.pi * self.n2[None, :]
        # d/dx1 swaps sin<->cos in x1, d/dx2 in x2
        d1 = self._combine(c1 * k1, -s1 * k1, s2, c2)
        d2 = self._combine(s1, c1, c2 * k2, -s2 * k2)
        f = self.family
        d1[:, (f == 0) | (f == 7) | (f == 8)] = 0.0
        d2[:, (f == 0) | (f == 5) | (f == 6)] = 0.0
        return d1, d2

    def derivative_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """D1, D2 with d/dx_d f_k = sum_l D_d[l, k] f_l (closed within the cutoff)."""
        m = len(self)
        D = [np.zeros((m, m)), np.zeros((m, m))]
        # (family, axis) -> (target family, sign)
        rules = {
            (1, 0): (3, 1), (2, 0): (4, 1), (3, 0): (1, -1), (4, 0): (2, -1),
            (5, 0): (6, -1), (6, 0): (5, 1),
            (1, 1): (2, -1), (2, 1): (1, 1), (3, 1): (4, -1), (4, 1): (3, 1),
            (7, 1): (8, -1), (8, 1): (7, 1),
        }
        for k, (f, n1, n2) in enumerate(self.indices):
            for axis in (0, 1):
                rule = rules.get((f, axis))
                if rule is None:
                    continue
                tgt, sign = rule
                n = n1 if axis == 0 else n2
                D[axis][self._pos[BasisIndex(tgt, n1, n2)], k] = sign * math.pi * n
        return D[0], D[1]

    def measure_coefficients(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """sum_j w_j f_k(X_j) for every k, via separable 1-D trig tables.

        Much faster than evaluating every basis function at every point, but
        the summation order differs, so exact cancellations hold only to roundoff.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        w = np.asarray(weights, dtype=float).reshape(-1)
        kmax = int(max(self.n1.max(), self.n2.max())) // 2
        freq = 2 * math.pi * np.arange(kmax + 1)
        c1, s1 = np.cos(pts[:, :1] * freq), np.sin(pts[:, :1] * freq)
        c2, s2 = np.cos(pts[:, 1:] * freq), np.sin(pts[:, 1:] * freq)
        wc1, ws1 = w[:, None] * c1, w[:, None] * s1
        cc, cs, sc, ss = wc1.T @ c2, wc1.T @ s2, ws1.T @ c2, ws1.T @ s2
        i1, i2 = self.n1 // 2, self.n2 // 2
        table = {
            0: cc[0, 0] + 0 * i1, 1: 2 * sc[i1, i2], 2: 2 * ss[i1, i2], 3: 2 * cc[i1, i2], 4: 2 * cs[i1, i2],
            5: SQRT2 * cc[i1, 0], 6: SQRT2 * sc[i1, 0], 7: SQRT2 * cc[0, i2], 8: SQRT2 * cs[0, i2],
        }
        out = np.empty(len(self))
        for fam, val in table.items():
            sel = self.family == fam
            out[sel] = val[sel]
        return out

    def grid_values(self, n_grid: int) -> np.ndarray:
        """Basis functions sampled at cell centres, shape (m, n, n)."""
        x = (np.arange(n_grid) + 0.5) / n_grid
        pts = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
        return self.values(pts).T.reshape(len(self), n_grid, n_grid)


def basis_eval(idx, p) -> float:
    f, n1, n2 = BasisIndex(*idx).validate()
    x1, x2 = float(p[0]), float(p[1])
    a, b = math.pi * n1 * x1, math.pi * n2 * x2
    return {
        0: lambda: 1.0,
        1: lambda: 2 * math.sin(a) * math.cos(b),
        2: lambda: 2 * math.sin(a) * math.sin(b),
        3: lambda: 2 * math.cos(a) * math.cos(b),
        4: lambda: 2 * math.cos(a) * math.sin(b),
        5: lambda: SQRT2 * math.cos(a),
        6: lambda: SQRT2 * math.sin(a),
        7: lambda: SQRT2 * math.cos(b),
        8: lambda: SQRT2 * math.sin(b),
    }[f]()


def eigenvalue(idx, gamma: float) -> float:
    _, n1, n2 = BasisIndex(*idx).validate()
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    return gamma * math.pi**2 * (n1 * n1 + n2 * n2)


class TestFunction:
    """A finite combination of basis functions with closed-form calculus."""

    __test__ = False  # not a pytest class

    def __init__(self, terms: dict | Sequence[tuple[Sequence[int], float]]):
        items = terms.items() if isinstance(terms, dict) else terms
        merged: dict[BasisIndex, float] = {}
        for idx, c in items:
            idx = BasisIndex(*idx).validate()
            merged[idx] = merged.get(idx, 0.0) + float(c)
        self.terms = list(merged.items())
        cutoff = max(max(i.n1, i.n2) for i in merged)
        self._basis = Basis(cutoff, indices=list(merged))
        self._coef = np.array(list(merged.values()))

    @classmethod
    def single(cls, family: int, n1: int, n2: int, scale: float = 1.0) -> "TestFunction":
        return cls([((family, n1, n2), scale)])

    def __call__(self, pts) -> np.ndarray:
        return self._basis.values(pts) @ self._coef

    def gradient(self, pts) -> np.ndarray:
        d1, d2 = self._basis.gradients(pts)
        return np.stack([d1 @ self._coef, d2 @ self._coef], axis=-1)

    def grad_sq(self, pts) -> np.ndarray:
        g = self.gradient(pts)
        return np.sum(g * g, axis=-1)

    def laplacian(self, pts) -> np.ndarray:
        return -(self._basis.values(pts) @ (self._coef * math.pi**2 * self._basis.wave_sq()))

    def evaluate(self, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value, Laplacian and |gradient|^2 in one pass."""
        vals = self._basis.values(pts)
        d1, d2 = self._basis.gradients(pts)
        g1, g2 = d1 @ self._coef, d2 @ self._coef
        return vals @ self._coef, -(vals @ (self._coef * math.pi**2 * self._basis.wave_sq())), g1 * g1 + g2 * g2

    def on_grid(self, n_grid: int) -> np.ndarray:
        x = (np.arange(n_grid) + 0.5) / n_grid
        pts = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)
        return self(pts).reshape(n_grid, n_grid)

    def coefficients(self, basis: Basis) -> np.ndarray:
        out = np.zeros(len(basis))
        for idx, c in self.terms:
            out[basis.position(idx)] += c
        return out


@dataclass
class SpectralField:
    """Coefficients (A, f_k) over a truncated basis."""

    gamma: float
    cutoff: int
    coeffs: np.ndarray
    basis: Basis = field(repr=False, default=None)

    def __post_init__(self):
        if self.basis is None:
            self.basis = _cached_basis(self.cutoff)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.basis),):
            raise ValueError("coefficient vector does not match the basis size")

    def __getitem__(self, idx) -> float:
        return float(self.coeffs[self.basis.position(idx)])

    def truncate(self, cutoff: int) -> "SpectralField":
        sub = _cached_basis(cutoff)
        pos = [self.basis.position(i) for i in sub.indices]
        return SpectralField(self.gamma, cutoff, self.coeffs[pos], sub)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema: torus_sir/spectral_field/1 gamma={self.gamma!r} cutoff={self.cutoff}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["family", "n1", "n2", "coeff"])
        for (f, n1, n2), c in zip(self.basis.indices, self.coeffs):
            w.writerow([f, n1, n2, repr(float(c))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SpectralField":
        lines = text.splitlines()
        meta = dict(tok.split("=") for tok in lines[0].split()[3:])
        cutoff = int(meta["cutoff"])
        basis = _cached_basis(cutoff)
        coeffs = np.zeros(len(basis))
        for row in csv.DictReader(lines[1:]):
            coeffs[basis.position((int(row["family"]), int(row["n1"]), int(row["n2"])))] = float(row["coeff"])
        return cls(float(meta["gamma"]), cutoff, coeffs, basis)


_BASIS_CACHE: dict[int, Basis] = {}


def _cached_basis(cutoff: int) -> Basis:
    if cutoff not in _BASIS_CACHE:
        _BASIS_CACHE[cutoff] = Basis(cutoff)
    return _BASIS_CACHE[cutoff]


def project_measure(points, weights, cutoff: int = DEFAULT_CUTOFF, gamma: float = 1.0) -> SpectralField:
    """Coefficients sum_j w_j f_k(X_j) of a weighted atomic measure."""
    basis = _cached_basis(cutoff)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if not np.all(np.isfinite(w)):
        raise ValueError("non-finite weights")
    coeffs = np.zeros(len(basis))
    for lo in range(0, len(pts), 4096):
        coeffs += w[lo:lo + 4096] @ basis.values(pts[lo:lo + 4096])
    return SpectralField(gamma, cutoff, coeffs, basis)


def grid_inner_products(fields: np.ndarray, cutoff: int) -> np.ndarray:
    """Rectangle-rule inner products (field, f_k) for a stack of cell-centred grids.

    ``fields`` has shape (..., n, n); returns (..., m).  Uses the FFT; for a
    cell-centred grid the phase shift exp(-i pi (k1 + k2) / n) is applied.
    """
    fields = np.asarray(fields, dtype=float)
    n = fields.shape[-1]
    if fields.shape[-2] != n:
        raise ValueError("grid must be square")
    if n % 4 or n <= 2 * cutoff:
        raise ValueError(f"grid size {n} must be a multiple of 4 and exceed 2*cutoff={2 * cutoff}")
    basis = _cached_basis(cutoff)
    F = np.fft.fft2(fields, axes=(-2, -1)) / (n * n)
    k = np.fft.fftfreq(n, d=1.0 / n)
    shift = np.exp(-1j * np.pi * k / n)
    F = F * shift[:, None] * shift[None, :]
    k1 = basis.n1 // 2
    k2 = basis.n2 // 2
    cp = F[..., k1, k2 % n]
    cm = F[..., k1, (-k2) % n]
    f = basis.family
    out = np.empty(fields.shape[:-2] + (len(basis),))
    table = {
        0: cp.real,
        1: -cp.imag - cm.imag,
        2: cm.real - cp.real,
        3: cp.real + cm.real,
        4: -cp.imag + cm.imag,
        5: SQRT2 * cp.real,
        6: -SQRT2 * cp.imag,
        7: SQRT2 * cp.real,
        8: -SQRT2 * cp.imag,
    }
    for fam, val in table.items():
        sel = f == fam
        out[..., sel] = val[..., sel]
    return out


def project_grid(field_values: np.ndarray, cutoff: int = DEFAULT_CUTOFF, gamma: float = 1.0) -> SpectralField:
    """Project a cell-centred periodic grid field onto the truncated basis."""
    coeffs = grid_inner_products(np.asarray(field_values, dtype=float), cutoff)
    return SpectralField(gamma, cutoff, coeffs)


def _weighted_norm(field: SpectralField, power: float) -> float:
    w = (1.0 + field.basis.eigenvalues(field.gamma)) ** power
    return math.sqrt(math.fsum(field.coeffs**2 * w))


def h_neg_s_norm(field: SpectralField, s: float) -> float:
    """Truncated dual Sobolev norm; weights (1 + lambda_k)^(-s)."""
    if not s > 0:
        raise ValueError("s must be positive")
    return _weighted_norm(field, -s)


def hs_norm(field: SpectralField, s: float) -> float:
    """Truncated Sobolev norm; weights (1 + lambda_k)^s."""
    if not s > 0:
        raise ValueError("s must be positive")
    return _weighted_norm(field, s)


def heat_apply(field: SpectralField, t: float) -> SpectralField:
    """Heat semigroup at time t, acting diagonally on coefficients."""
    if t < 0:
        raise ValueError("t must be non-negative")
    factor = np.exp(-field.basis.eigenvalues(field.gamma) * t)
    return SpectralField(field.gamma, field.cutoff, field.coeffs * factor, field.basis)


# --- convergence diagnostics for the dual-norm series --------------------------------


@dataclass
class SumDiagnosticRow:
    cutoff: int
    value_sum: float
    grad_sum: float


def _indices_between(lo: int, hi: int) -> np.ndarray:
    """Indices with max(n1, n2) in (lo, hi], as (family, n1, n2) rows."""
    rows = []
    for n1 in range(0, hi + 1, 2):
        for n2 in range(0, hi + 1, 2):
            if max(n1, n2) <= lo:
                continue
            if n1 == 0 and n2 == 0:
                rows.append((0, 0, 0))
            elif n2 == 0:
                rows += [(5, n1, 0), (6, n1, 0)]
            elif n1 == 0:
                rows += [(7, 0, n2), (8, 0, n2)]
            else:
                rows += [(f, n1, n2) for f in (1, 2, 3, 4)]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def _shell_sums(rows: np.ndarray, s: float, gamma: float, x) -> tuple[float, float]:
    """sum rho_k(x)^2 and sum |grad rho_k(x)|^2 over a set of indices."""
    if len(rows) == 0:
        return 0.0, 0.0
    f, n1, n2 = rows[:, 0], rows[:, 1], rows[:, 2]
    a = math.pi * n1 * float(x[0])
    b = math.pi * n2 * float(x[1])
    sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
    k1, k2 = math.pi * n1, math.pi * n2
    val = np.select(
        [f == 0, f == 1, f == 2, f == 3, f == 4, f == 5, f == 6, f == 7, f == 8],
        [np.ones_like(sa), 2 * sa * cb, 2 * sa * sb, 2 * ca * cb, 2 * ca * sb, SQRT2 * ca, SQRT2 * sa, SQRT2 * cb, SQRT2 * sb],
    )
    g1 = np.select(
        [f == 1, f == 2, f == 3, f == 4, f == 5, f == 6],
        [2 * k1 * ca * cb, 2 * k1 * ca * sb, -2 * k1 * sa * cb, -2 * k1 * sa * sb, -SQRT2 * k1 * sa, SQRT2 * k1 * ca],
        default=0.0,
    )
    g2 = np.select(
        [f == 1, f == 2, f == 3, f == 4, f == 7, f == 8],
        [-2 * k2 * sa * sb, 2 * k2 * sa * cb, -2 * k2 * ca * sb, 2 * k2 * ca * cb, -SQRT2 * k2 * sb, SQRT2 * k2 * cb],
        default=0.0,
    )
    w = (1.0 + gamma * math.pi**2 * (n1**2 + n2**2)) ** (-s)
    return math.fsum(val**2 * w), math.fsum((g1**2 + g2**2) * w)


def dual_norm_sum_diagnostic(s: float, gamma: float, x, cutoffs: Iterable[int]) -> list[SumDiagnosticRow]:
    """Partial sums of rho_k(x)^2 and |grad rho_k(x)|^2, rho_k = f_k / (1 + lambda_k)^(s/2).

    Sums over all indices with n1, n2 <= cutoff, for each cutoff in increasing order.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    cutoffs = sorted(int(c) for c in cutoffs)
    if any(c < 0 or c % 2 for c in cutoffs):
        raise ValueError("cutoffs must be even non-negative integers")
    rows, v_parts, g_parts, prev = [], [], [], -1
    for c in cutoffs:
        v, g = _shell_sums(_indices_between(prev, c), s, gamma, x)
        v_parts.append(v)
        g_parts.append(g)
        rows.append(SumDiagnosticRow(c, math.fsum(v_parts), math.fsum(g_parts)))
        prev = c
    return rows


def doubling_ratio(partial_sums: Sequence[float]) -> float:
    """Geometric mean of successive tail-increment ratios along a doubling sequence.

    With partial sums S_0 < S_1 < ... at cutoffs c, 2c, 4c, ..., the increments
    d_k = S_k - S_{k-1} scale like r^k for a power-law tail; r < 1 means the
    series converges geometrically in the doubling index, r >= 1 means it does not.
    """
    s = np.asarray(partial_sums, dtype=float)
    if len(s) < 3:
        raise ValueError("need at least three partial sums")
    inc = np.diff(s)
    if np.any(inc <= 0):
        return 0.0 if np.all(inc[-1:] <= 0) else float("nan")
    ratios = inc[1:] / inc[:-1]
    return float(np.exp(np.mean(np.log(ratios))))


def classify_series(partial_sums: Sequence[float], band: float = 0.1) -> str:
    """'convergent', 'marginal' or 'divergent' from partial sums at doubling cutoffs."""
    r = doubling_ratio(partial_sums)
    if r < 1.0 - band:
        return "convergent"
    if r > 1.0 + band:
        return "divergent"
    return "marginal"


def diagnostic_to_csv(rows: Sequence[SumDiagnosticRow], s: float, gamma: float) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: torus_sir/sum_diagnostic/1 s={s!r} gamma={gamma!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cutoff", "value_sum", "grad_sum"])
    for r in rows:
        w.writerow([r.cutoff, repr(r.value_sum), repr(r.grad_sum)])
    return buf.getvalue()
