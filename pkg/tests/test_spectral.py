import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torus_sir.spectral import (
    Basis,
    BasisIndex,
    SpectralField,
    TestFunction,
    dual_norm_sum_diagnostic,
    basis_eval,
    classify_series,
    diagnostic_to_csv,
    doubling_ratio,
    eigenvalue,
    enumerate_basis,
    grid_inner_products,
    h_neg_s_norm,
    heat_apply,
    hs_norm,
    project_grid,
    project_measure,
)

coord = st.floats(0.0, 1.0, exclude_max=True, allow_nan=False)


def cell_grid(n):
    x = (np.arange(n) + 0.5) / n
    return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1).reshape(-1, 2)


def test_basis_eval_examples():
    assert basis_eval((0, 0, 0), (0.37, 0.81)) == 1.0
    assert basis_eval((3, 2, 2), (0.0, 0.0)) == 2.0
    assert basis_eval((1, 2, 2), (0.25, 0.0)) == pytest.approx(2.0, abs=1e-15)


@pytest.mark.parametrize("idx", [(9, 2, 2), (0, 2, 0), (1, 2, 0), (5, 0, 2), (7, 2, 2), (3, 1, 2), (3, -2, 2)])
def test_basis_eval_rejects_invalid_index(idx):
    with pytest.raises(ValueError):
        basis_eval(idx, (0.1, 0.2))


@given(st.sampled_from(enumerate_basis(8)), coord, coord)
def test_basis_bounded_by_two(idx, x, y):
    assert abs(basis_eval(idx, (x, y))) <= 2.0 + 1e-15


def test_vectorised_basis_matches_scalar():
    b = Basis(6)
    pts = np.random.default_rng(0).random((20, 2))
    vals = b.values(pts)
    for k, idx in enumerate(b.indices):
        for p in range(20):
            assert vals[p, k] == pytest.approx(basis_eval(idx, pts[p]), abs=1e-14)


def test_basis_size():
    # 1 constant, 4 one-dimensional families per wave number, 4 mixed per pair
    assert len(enumerate_basis(32)) == 1 + 4 * 16 + 4 * 16 * 16
    assert len(enumerate_basis(0)) == 1


def test_eigenvalue_examples():
    assert eigenvalue((0, 0, 0), 1.0) == 0.0
    assert eigenvalue((3, 2, 2), 1.0) == pytest.approx(78.9568352, abs=1e-7)
    assert eigenvalue((1, 4, 6), 0.0) == 0.0


def test_basis_functions_are_laplacian_eigenfunctions():
    b = Basis(6)
    pts = np.random.default_rng(1).random((10, 2))
    for idx in b.indices:
        tf = TestFunction([(idx, 1.0)])
        assert np.allclose(tf.laplacian(pts), -eigenvalue(idx, 1.0) * tf(pts), atol=1e-10)


def test_gradients_match_finite_differences():
    b = Basis(6)
    pts = np.random.default_rng(2).random((8, 2))
    d1, d2 = b.gradients(pts)
    e = 1e-6
    fd1 = (b.values(pts + [e, 0]) - b.values(pts - [e, 0])) / (2 * e)
    fd2 = (b.values(pts + [0, e]) - b.values(pts - [0, e])) / (2 * e)
    assert np.max(np.abs(d1 - fd1)) < 1e-6 * 40
    assert np.max(np.abs(d2 - fd2)) < 1e-6 * 40


def test_derivative_matrices_reproduce_gradients():
    b = Basis(8)
    pts = np.random.default_rng(3).random((12, 2))
    D1, D2 = b.derivative_matrices()
    d1, d2 = b.gradients(pts)
    vals = b.values(pts)
    assert np.max(np.abs(vals @ D1 - d1)) < 1e-12
    assert np.max(np.abs(vals @ D2 - d2)) < 1e-12


def test_project_measure_examples():
    f = project_measure([(0.3, 0.7)], [1.0], cutoff=8)
    assert f[(0, 0, 0)] == 1.0
    g = project_measure([(0.3, 0.7), (0.3, 0.7)], [1.0, -1.0], cutoff=8)
    assert np.all(g.coeffs == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([4, 8, 16]))
def test_separable_measure_coefficients_match_direct_sum(seed, cutoff):
    rng = np.random.default_rng(seed)
    pts, w = rng.random((200, 2)), rng.standard_normal(200)
    basis = Basis(cutoff)
    assert np.max(np.abs(basis.measure_coefficients(pts, w) - w @ basis.values(pts))) < 1e-12


def test_project_measure_uniform_atoms_rms_decay():
    # for uniform atoms each non-constant coefficient has mean 0 and variance 1/N
    modes = [(3, 2, 2), (1, 2, 4), (5, 2, 0), (8, 0, 6)]
    rms = []
    for n in (100, 400, 1600):
        sq = []
        for seed in range(50):
            pts = np.random.default_rng(seed).random((n, 2))
            f = project_measure(pts, np.full(n, 1.0 / n), cutoff=6)
            assert f[(0, 0, 0)] == pytest.approx(1.0, abs=1e-12)
            sq.append([f[m] ** 2 for m in modes])
        rms.append(np.sqrt(np.mean(sq)))
    slope = np.polyfit(np.log([100, 400, 1600]), np.log(rms), 1)[0]
    assert abs(slope + 0.5) < 0.1
    # 200 squared draws, relative sd of the mean ~ 0.1
    assert rms[-1] * math.sqrt(1600) == pytest.approx(1.0, abs=0.2)


def test_project_grid_examples():
    n = 64
    one = project_grid(np.ones((n, n)), cutoff=16)
    assert one[(0, 0, 0)] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(one.coeffs[1:])) <= 1e-12
    tf = TestFunction.single(3, 2, 2)
    f = project_grid(tf.on_grid(n), cutoff=16)
    k = f.basis.position((3, 2, 2))
    assert f.coeffs[k] == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(np.delete(f.coeffs, k))) <= 1e-12
    f3 = project_grid(3.0 * tf.on_grid(n), cutoff=16)
    assert f3[(3, 2, 2)] == pytest.approx(3.0, abs=1e-12)


@pytest.mark.parametrize("n,cutoff", [(62, 8), (32, 16), (16, 8)])
def test_project_grid_aliasing_guard(n, cutoff):
    with pytest.raises(ValueError):
        project_grid(np.ones((n, n)), cutoff=cutoff)


def test_fft_projection_matches_rectangle_rule():
    n, cutoff = 32, 10
    field = np.random.default_rng(4).standard_normal((n, n))
    dense = Basis(cutoff).values(cell_grid(n)).T @ field.reshape(-1) / n**2
    assert np.max(np.abs(grid_inner_products(field, cutoff) - dense)) < 1e-13


def test_grid_projection_is_exact_for_band_limited_fields():
    b = Basis(12)
    c = np.random.default_rng(5).standard_normal(len(b))
    field = (b.values(cell_grid(32)) @ c).reshape(32, 32)
    assert np.max(np.abs(grid_inner_products(field, 12) - c)) < 1e-12


def test_norm_examples():
    zero = SpectralField(1.0, 8, np.zeros(len(enumerate_basis(8))))
    assert h_neg_s_norm(zero, 1.5) == 0.0
    leb = project_grid(np.ones((64, 64)), cutoff=16, gamma=1.0)
    for s in (0.5, 1.5, 2.5):
        assert h_neg_s_norm(leb, s) == pytest.approx(1.0, abs=1e-12)
        assert hs_norm(leb, s) == pytest.approx(1.0, abs=1e-12)
    mode = project_grid(TestFunction.single(3, 2, 2).on_grid(64), cutoff=16, gamma=1.0)
    assert hs_norm(mode, 2.0) == pytest.approx(1 + 8 * math.pi**2, rel=1e-12)
    assert hs_norm(mode, 2.0) == pytest.approx(79.9568, abs=1e-4)


def test_norm_pythagorean_for_orthogonal_modes():
    b = Basis(8)
    c = np.zeros(len(b))
    c[b.position((1, 2, 4))] = 0.7
    c[b.position((6, 8, 0))] = -1.3
    a = SpectralField(0.5, 8, np.where(np.arange(len(b)) == b.position((1, 2, 4)), c, 0.0))
    d = SpectralField(0.5, 8, np.where(np.arange(len(b)) == b.position((6, 8, 0)), c, 0.0))
    both = SpectralField(0.5, 8, c)
    for s in (1.0, 2.5):
        assert hs_norm(both, s) == pytest.approx(math.hypot(hs_norm(a, s), hs_norm(d, s)), abs=1e-12)
        assert h_neg_s_norm(both, s) == pytest.approx(math.hypot(h_neg_s_norm(a, s), h_neg_s_norm(d, s)), abs=1e-12)


def test_norm_rejects_non_positive_s():
    f = SpectralField(1.0, 0, np.ones(1))
    with pytest.raises(ValueError):
        h_neg_s_norm(f, 0.0)
    with pytest.raises(ValueError):
        hs_norm(f, -1.0)


# partial sums of the dual norm of a point mass at the origin, gamma=1, s=1.5,
# from a scalar loop over basis_eval (frozen)
DELTA_NORMS = {16: 1.016356700756744, 32: 1.0169946527375031, 64: 1.017328882684237}


def test_point_mass_dual_norm_partial_sums():
    vals = {}
    for cutoff, expected in DELTA_NORMS.items():
        f = project_measure([(0.0, 0.0)], [1.0], cutoff=cutoff, gamma=1.0)
        vals[cutoff] = h_neg_s_norm(f, 1.5)
        assert vals[cutoff] == pytest.approx(expected, abs=1e-12)
    assert vals[16] < vals[32] < vals[64]
    # tail ~ C / cutoff: squared increments halve per doubling; Richardson limits agree
    sq = [vals[c] ** 2 for c in (16, 32, 64)]
    assert (sq[2] - sq[1]) / (sq[1] - sq[0]) == pytest.approx(0.5, abs=0.05)
    lim_a, lim_b = 2 * sq[1] - sq[0], 2 * sq[2] - sq[1]
    assert abs(lim_a - lim_b) < 0.2 * (sq[2] - sq[1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([4, 8, 12]))
def test_dual_norm_monotone_in_cutoff(seed, cutoff):
    pts = np.random.default_rng(seed).random((5, 2))
    f = project_measure(pts, np.full(5, 0.2), cutoff=cutoff + 4)
    assert h_neg_s_norm(f.truncate(cutoff), 1.5) <= h_neg_s_norm(f, 1.5) + 1e-15


def test_heat_apply_examples():
    b = Basis(8)
    c = np.random.default_rng(6).standard_normal(len(b))
    f = SpectralField(1.0, 8, c)
    assert np.array_equal(heat_apply(f, 0.0).coeffs, c)
    const = SpectralField(1.0, 8, np.eye(len(b))[0] * 2.0)
    assert np.array_equal(heat_apply(const, 3.7).coeffs, const.coeffs)
    k = b.position((3, 2, 2))
    factor = heat_apply(f, 0.1).coeffs[k] / c[k]
    assert factor == pytest.approx(math.exp(-0.8 * math.pi**2), rel=1e-12)
    assert factor == pytest.approx(3.7235e-4, rel=1e-4)
    with pytest.raises(ValueError):
        heat_apply(f, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.floats(0.01, 2.0), st.integers(0, 2**31))
def test_heat_semigroup_and_contraction(t1, t2, gamma, seed):
    b = Basis(8)
    f = SpectralField(gamma, 8, np.random.default_rng(seed).standard_normal(len(b)))
    two = heat_apply(heat_apply(f, t1), t2).coeffs
    one = heat_apply(f, t1 + t2).coeffs
    assert np.max(np.abs(two - one)) <= 1e-12
    for s in (0.5, 2.5):
        assert hs_norm(heat_apply(f, t1), s) <= hs_norm(f, s) * (1 + 1e-14)


def test_parseval_against_grid_quadrature():
    # H^1 norm^2 = int u^2 + gamma int |grad u|^2 and H^2 norm^2 = int ((1 - gamma lap) u)^2
    gamma, n, cutoff = 0.3, 64, 12
    b = Basis(cutoff)
    c = np.random.default_rng(7).standard_normal(len(b)) / (1 + b.wave_sq())
    pts = cell_grid(n)
    u = (b.values(pts) @ c).reshape(n, n)
    f = project_grid(u, cutoff, gamma)
    k = np.fft.fftfreq(n, 1.0 / n)
    uh = np.fft.fft2(u)
    ux = np.fft.ifft2(2j * np.pi * k[:, None] * uh).real
    uy = np.fft.ifft2(2j * np.pi * k[None, :] * uh).real
    lap = np.fft.ifft2(-4 * np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2) * uh).real
    h1 = np.mean(u**2) + gamma * np.mean(ux**2 + uy**2)
    h2 = np.mean((u - gamma * lap) ** 2)
    assert hs_norm(f, 1.0) ** 2 == pytest.approx(h1, rel=1e-10)
    assert hs_norm(f, 2.0) ** 2 == pytest.approx(h2, rel=1e-10)


def test_spectral_field_csv_roundtrip():
    b = Basis(4)
    f = SpectralField(0.25, 4, np.random.default_rng(8).standard_normal(len(b)))
    text = f.to_csv()
    assert text.startswith("# schema:")
    assert text.splitlines()[1] == "family,n1,n2,coeff"
    g = SpectralField.from_csv(text)
    assert g.gamma == 0.25 and g.cutoff == 4
    assert np.array_equal(g.coeffs, f.coeffs)


def test_diagnostic_point_mass_examples():
    cuts = [16, 32, 64, 128, 256]
    rows = dual_norm_sum_diagnostic(2.0, 1.0, (0.0, 0.0), cuts)
    inc = np.diff([r.value_sum for r in rows])
    assert np.all(inc[cuts.index(128):] < 1e-3)
    rows = dual_norm_sum_diagnostic(0.5, 1.0, (0.0, 0.0), cuts)
    v = [r.value_sum for r in rows]
    assert all(b >= 1.5 * a for a, b in zip(v, v[1:]))


def test_diagnostic_sums_match_vectorised_basis():
    x = (0.3, 0.85)
    rows = dual_norm_sum_diagnostic(1.5, 0.7, x, [6, 10])
    b = Basis(10)
    w = (1 + b.eigenvalues(0.7)) ** -1.5
    vals = b.values(np.array([x]))[0]
    d1, d2 = b.gradients(np.array([x]))
    assert rows[-1].value_sum == pytest.approx(np.sum(vals**2 * w), rel=1e-13)
    assert rows[-1].grad_sum == pytest.approx(np.sum((d1[0] ** 2 + d2[0] ** 2) * w), rel=1e-13)
    b6 = Basis(6)
    assert rows[0].value_sum == pytest.approx(np.sum(b6.values(np.array([x]))[0] ** 2 * (1 + b6.eigenvalues(0.7)) ** -1.5), rel=1e-13)


def test_diagnostic_value_sum_independent_of_point():
    # sum_i f_i(x)^2 is the same for every x within a (n1, n2) block
    a = dual_norm_sum_diagnostic(1.5, 1.0, (0.0, 0.0), [32])[0]
    b = dual_norm_sum_diagnostic(1.5, 1.0, (0.41, 0.77), [32])[0]
    assert a.value_sum == pytest.approx(b.value_sum, rel=1e-12)
    assert a.grad_sum == pytest.approx(b.grad_sum, rel=1e-12)


@pytest.mark.parametrize(
    "s,value_class,grad_class",
    [(0.5, "divergent", "divergent"), (1.5, "convergent", "divergent"), (2.5, "convergent", "convergent")],
)
def test_classification(s, value_class, grad_class):
    rows = dual_norm_sum_diagnostic(s, 1.0, (0.0, 0.0), [16, 32, 64, 128])
    assert classify_series([r.value_sum for r in rows]) == value_class
    assert classify_series([r.grad_sum for r in rows]) == grad_class


def test_doubling_ratio_geometric_series():
    sums = np.cumsum([1.0, 0.5, 0.25, 0.125])
    assert doubling_ratio(sums) == pytest.approx(0.5)
    assert classify_series(np.arange(1.0, 5.0)) == "marginal"
    with pytest.raises(ValueError):
        doubling_ratio([1.0, 2.0])


def test_diagnostic_csv():
    rows = dual_norm_sum_diagnostic(1.5, 1.0, (0.0, 0.0), [8, 16])
    lines = diagnostic_to_csv(rows, 1.5, 1.0).splitlines()
    assert lines[0].startswith("# schema:")
    assert lines[1] == "cutoff,value_sum,grad_sum"
    assert len(lines) == 4


def test_index_validation():
    assert BasisIndex(3, 2, 4).validate() == (3, 2, 4)
    with pytest.raises(ValueError):
        enumerate_basis(3)
