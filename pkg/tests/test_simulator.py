import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from torus_sir.simulator import (
    INFECTED,
    RECOVERED,
    SUSCEPTIBLE,
    Density,
    InitialCondition,
    Population,
    Region,
    SimConfig,
    empirical_measures,
    events_from_csv,
    events_to_csv,
    infection_rate,
    infection_rates,
    replicate_rng,
    run,
    sample_initial,
    sample_positions,
    snapshots_to_csv,
    step,
    summary_records,
    summary_to_jsonl,
    total_event_rate_bound,
    track_martingale,
)
from torus_sir.spectral import TestFunction
from torus_sir.torus import KernelSpec


def make_config(**kw):
    base = dict(
        N=200,
        beta=1.0,
        alpha=0.5,
        gamma=0.05,
        kernel=KernelSpec(radius=0.2),
        initial=InitialCondition(Region("disc", radius=0.25), 0.5),
        T=1.0,
        snapshot_times=(0.0, 0.5, 1.0),
        seed=3,
    )
    base.update(kw)
    return SimConfig(**base)


# --- initial condition ---------------------------------------------------------------


def test_region_membership():
    rect = Region("rect", lo=(0.0, 0.0), hi=(0.5, 1.0))
    assert rect.contains(np.array([[0.25, 0.9], [0.5, 0.1], [0.75, 0.2]])).tolist() == [True, False, False]
    disc = Region("disc", center=(0.05, 0.05), radius=0.1)
    # wraps around the corner
    assert disc.contains(np.array([[0.98, 0.98], [0.2, 0.2]])).tolist() == [True, False]
    with pytest.raises(ValueError):
        Region("disc", radius=0.6)
    with pytest.raises(ValueError):
        Region("rect", lo=(0.5, 0.0), hi=(0.4, 1.0))


def test_region_and_config_roundtrip():
    cfg = make_config(initial=InitialCondition(Region("rect", (0.1, 0.2), (0.6, 0.9)), 0.3, Density("cosine", 0.4)))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg


def test_density_validation():
    d = Density("cosine", amplitude=0.5)
    assert d.delta1 == 0.5 and d.delta2 == 1.5
    with pytest.raises(ValueError):
        Density("cosine", amplitude=0.5, delta2=1.2)
    with pytest.raises(ValueError):
        Density("cosine", amplitude=1.0)


def test_sample_initial_empty_region_all_susceptible():
    cfg = make_config(initial=InitialCondition(Region("none"), 0.5))
    pop = sample_initial(cfg, replicate_rng(1))
    assert pop.counts() == (200, 0, 0)


def test_sample_initial_whole_torus_p1_all_infected():
    cfg = make_config(initial=InitialCondition(Region("all"), 1.0))
    assert sample_initial(cfg, replicate_rng(1)).counts() == (0, 200, 0)


def test_sample_initial_binomial_mean():
    # I(0) ~ Binomial(N, p |A|) with |A| = 1/2
    cfg = make_config(N=10_000, initial=InitialCondition(Region("rect", (0, 0), (0.5, 1.0)), 0.5))
    counts = [sample_initial(cfg, replicate_rng(cfg.seed, r)).counts()[1] for r in range(200)]
    tol = 3 * math.sqrt(10_000 * 0.25 * 0.75) / math.sqrt(200)
    assert abs(np.mean(counts) - 2500) <= tol


def test_rejection_sampling_follows_density():
    d = Density("cosine", amplitude=0.8, n_grid=16)
    pts = sample_positions(d, 200_000, np.random.default_rng(0))
    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=16, range=[[0, 1], [0, 1]])
    expected = d.grid() / 256 * len(pts)
    chi2 = np.sum((hist - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, 255) > 1e-3


def test_rejection_sampling_hard_cap():
    class Empty:
        kind = "cosine"
        delta2 = 1.0

        def lookup(self, pts):
            return np.zeros(len(pts))

    with pytest.raises(RuntimeError):
        sample_positions(Empty(), 10, np.random.default_rng(0))


# --- rates -----------------------------------------------------------------------------


def test_infection_rate_examples():
    cfg = make_config(N=2, beta=2.0)
    pop = Population(np.array([[0.1, 0.1], [0.6, 0.6]]), np.array([SUSCEPTIBLE, INFECTED], dtype=np.int8))
    assert infection_rate(0, pop, cfg) == 0.0
    none = Population(pop.pos, np.array([SUSCEPTIBLE, SUSCEPTIBLE], dtype=np.int8))
    assert infection_rate(0, none, cfg) == 0.0
    with pytest.raises(ValueError):
        infection_rate(1, pop, cfg)


def test_infection_rate_constant_kernel():
    cfg = make_config(N=50, beta=0.7, kernel=KernelSpec(mode="constant"))
    pop = sample_initial(cfg, replicate_rng(2))
    n_inf = pop.counts()[1]
    rates = infection_rates(pop, cfg)
    assert np.allclose(rates[pop.state == SUSCEPTIBLE], 0.7 * n_inf / 50, rtol=0, atol=1e-15)


def test_envelope_examples():
    cfg = make_config(N=20, alpha=1.0, beta=2.0)
    st_ = np.zeros(20, dtype=np.int8)
    pop = Population(np.random.default_rng(0).random((20, 2)), st_)
    assert total_event_rate_bound(pop, cfg) == 0.0
    st_[:10] = INFECTED
    assert total_event_rate_bound(pop, cfg) == 30.0


def test_envelope_dominates_exact_rates():
    rng = np.random.default_rng(42)
    kernels = [KernelSpec(radius=r) for r in (0.05, 0.15, 0.3, 0.45)]
    for trial in range(10_000):
        n = int(rng.integers(1, 25))
        cfg = make_config(N=n, kernel=kernels[trial % 4], beta=1.0, alpha=0.5)
        pop = Population(rng.random((n, 2)), rng.integers(0, 3, n).astype(np.int8))
        total = infection_rates(pop, cfg).sum() + cfg.alpha * pop.counts()[1]
        assert total <= total_event_rate_bound(pop, cfg) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32))
def test_rates_exchangeable(seed):
    rng = np.random.default_rng(seed)
    cfg = make_config(N=40)
    pop = Population(rng.random((40, 2)), rng.integers(0, 3, 40).astype(np.int8))
    perm = rng.permutation(40)
    shuffled = Population(pop.pos[perm], pop.state[perm])
    assert np.allclose(infection_rates(shuffled, cfg), infection_rates(pop, cfg)[perm], rtol=1e-13, atol=0)


# --- event loop ------------------------------------------------------------------------


def test_recovery_gaps_are_exponential_order_statistics():
    # beta = 0: with k infected left the next gap is Exp(k alpha).  KS at the 1% level
    # on 1000 replicates, repeated on three streams; at most one rejection allowed.
    pvalues = []
    for seed in (3, 4, 5):
        cfg = make_config(
            N=5, beta=0.0, alpha=1.3, gamma=0.0, seed=seed, T=100.0, snapshot_times=(),
            initial=InitialCondition(Region("all"), 1.0),
        )
        scaled = []
        for r in range(1000):
            res = run(cfg, replicate=r)
            times = [0.0] + [e.time for e in res.events]
            assert [e.kind for e in res.events] == ["recovery"] * 5
            for k, gap in zip(range(5, 0, -1), np.diff(times)):
                scaled.append(gap * k * cfg.alpha)
        pvalues.append(stats.kstest(scaled, "expon").pvalue)
    assert sum(p < 0.01 for p in pvalues) <= 1, pvalues


def test_gamma_zero_positions_frozen():
    cfg = make_config(gamma=0.0)
    res = run(cfg)
    assert len(res.events) > 0
    for snap in res.snapshots[1:]:
        assert np.array_equal(snap.pos, res.snapshots[0].pos)


def test_run_horizon_zero_gives_initial_snapshot_only():
    cfg = make_config(T=0.0, snapshot_times=(0.0,))
    res = run(cfg)
    assert res.events == [] and len(res.snapshots) == 1 and res.snapshots[0].time == 0.0


def test_run_deterministic():
    cfg = make_config()
    a, b = run(cfg), run(cfg)
    assert events_to_csv(a.events) == events_to_csv(b.events)
    assert all(np.array_equal(x.pos, y.pos) for x, y in zip(a.snapshots, b.snapshots))
    assert events_to_csv(run(cfg, replicate=1).events) != events_to_csv(a.events)


def test_no_initial_infection_means_no_events():
    cfg = make_config(initial=InitialCondition(Region("all"), 0.0))
    res = run(cfg)
    assert res.events == []
    assert [s.counts() for s in res.snapshots] == [(200, 0, 0)] * 3


@settings(max_examples=15, deadline=None)
@given(
    st.integers(1, 60),
    st.floats(0.0, 3.0),
    st.floats(0.1, 2.0),
    st.sampled_from([0.0, 0.01, 0.2]),
    st.integers(0, 2**32),
)
def test_event_log_invariants(n, beta, alpha, gamma, seed):
    cfg = make_config(
        N=n, beta=beta, alpha=alpha, gamma=gamma, seed=seed, T=2.0, snapshot_times=(0.0, 0.7, 2.0),
        initial=InitialCondition(Region("all"), 0.3),
    )
    res = run(cfg, check_rates=True)
    state = res.snapshots[0].state.copy()
    counts = [tuple(np.bincount(state, minlength=3))]
    times = [e.time for e in res.events]
    assert all(a < b for a, b in zip(times, times[1:]))
    for e in res.events:
        if e.kind == "infection":
            assert state[e.agent_id] == SUSCEPTIBLE
            state[e.agent_id] = INFECTED
        else:
            assert state[e.agent_id] == INFECTED
            state[e.agent_id] = RECOVERED
        c = tuple(np.bincount(state, minlength=3))
        assert sum(c) == n
        assert c[0] <= counts[-1][0] and c[2] >= counts[-1][2]
        counts.append(c)
    assert np.array_equal(state, res.snapshots[-1].state)
    for snap in res.snapshots:
        assert np.all((snap.pos >= 0) & (snap.pos < 1))


def test_step_without_infected_advances_to_limit():
    cfg = make_config(initial=InitialCondition(Region("none"), 0.5))
    rng = replicate_rng(0)
    pop = sample_initial(cfg, rng)
    before = pop.pos.copy()
    ev, reached = step(pop, cfg, rng, t_limit=0.3)
    assert ev is None and reached and pop.t == 0.3
    assert not np.array_equal(before, pop.pos)


def test_diffusion_increment_variance():
    # displacement per coordinate over time t has variance 2 gamma t
    cfg = make_config(N=20_000, beta=0.0, gamma=0.01, T=0.5, snapshot_times=(0.0, 0.5), initial=InitialCondition(Region("none"), 0.0))
    res = run(cfg)
    d = res.snapshots[1].pos - res.snapshots[0].pos
    d = (d + 0.5) % 1.0 - 0.5
    assert np.var(d) == pytest.approx(2 * 0.01 * 0.5, rel=0.03)


# --- measures and martingales ----------------------------------------------------------


def test_empirical_measures_masses():
    cfg = make_config()
    res = run(cfg)
    for snap in res.snapshots:
        mu = empirical_measures(snap)
        S, I, R = snap.counts()
        assert mu["S"].mass == pytest.approx(S / cfg.N, abs=1e-14)
        assert mu["I"].mass == pytest.approx(I / cfg.N, abs=1e-14)
        assert mu["R"].mass == pytest.approx(R / cfg.N, abs=1e-14)
        assert mu["N"].mass == pytest.approx(1.0, abs=1e-14)
        one = TestFunction.single(0, 0, 0)
        assert mu["I"].pair(one) == pytest.approx(I / cfg.N, abs=1e-14)


def test_empirical_measures_all_susceptible():
    cfg = make_config(initial=InitialCondition(Region("none"), 0.5))
    mu = empirical_measures(run(cfg).snapshots[0])
    assert mu["S"].mass == pytest.approx(1.0) and mu["I"].mass == 0.0 and mu["R"].mass == 0.0


def test_single_mode_pairing_clt_at_time_zero():
    # (mu^N_0, f) for orthonormal f and uniform positions: mean 0, variance 1/N
    cfg = make_config(N=10_000, T=0.0, snapshot_times=(0.0,))
    phi = TestFunction.single(3, 2, 2)
    vals = [empirical_measures(run(cfg, r).snapshots[0])["N"].pair(phi) for r in range(100)]
    vals = np.array(vals) * math.sqrt(cfg.N)
    assert abs(vals.mean()) <= 3 / math.sqrt(100)
    assert vals.std(ddof=1) == pytest.approx(1.0, abs=0.25)


def test_martingale_zero_without_dynamics():
    cfg = make_config(beta=0.0, gamma=0.0)
    _, track = track_martingale(cfg, TestFunction.single(3, 2, 2))
    assert track.M == [0.0, 0.0, 0.0]
    assert track.H == [0.0, 0.0, 0.0]


def test_martingale_starts_at_zero():
    _, track = track_martingale(make_config(), TestFunction.single(1, 2, 4))
    assert track.times[0] == 0.0
    assert track.M[0] == 0.0 and track.L[0] == 0.0 and track.H[0] == 0.0


def test_compensated_infection_count_has_mean_zero():
    # phi = 1, gamma = 0, constant kernel: M = (S_t - S_0)/N + beta int S I / N^2
    cfg = make_config(
        N=100, beta=1.5, alpha=0.5, gamma=0.0, kernel=KernelSpec(mode="constant"),
        initial=InitialCondition(Region("all"), 0.1), snapshot_times=(1.0,),
    )
    one = TestFunction.single(0, 0, 0)
    vals = np.array([track_martingale(cfg, one, r)[1].M[0] for r in range(500)])
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_martingale_total_mass_is_exact_for_constant():
    # phi = 1 on the total measure has no drift and no jumps
    cfg = make_config()
    _, track = track_martingale(cfg, TestFunction.single(0, 0, 0))
    assert np.allclose(track.H, 0.0, atol=1e-12)
    assert np.allclose(track.qv_H, 0.0)


# --- serialisation ---------------------------------------------------------------------


def test_event_log_csv_roundtrip():
    res = run(make_config())
    text = events_to_csv(res.events)
    lines = text.splitlines()
    assert lines[0].startswith("# schema:") and lines[1] == "time,kind,agent_id"
    assert events_from_csv(text) == res.events


def test_snapshot_csv_and_summary():
    cfg = make_config(N=10)
    res, track = track_martingale(cfg, TestFunction.single(3, 2, 2))
    text = snapshots_to_csv(res.snapshots)
    assert text.splitlines()[1] == "time,agent_id,x1,x2,state"
    assert len(text.splitlines()) == 2 + 3 * 10
    assert snapshots_to_csv(res.snapshots, positions=False).splitlines()[1] == "time,agent_id,state"
    recs = summary_records(res, track)
    assert [r["time"] for r in recs] == [0.0, 0.5, 1.0]
    assert all(r["S"] + r["I"] + r["R"] == 10 for r in recs)
    assert summary_to_jsonl(recs).count("\n") == 3


def test_config_validation():
    with pytest.raises(ValueError):
        make_config(N=0)
    with pytest.raises(ValueError):
        make_config(snapshot_times=(0.5, 0.2))
    with pytest.raises(ValueError):
        make_config(snapshot_times=(0.0, 2.0))
    with pytest.raises(ValueError):
        make_config(alpha=0.0)


def test_first_event_distribution_matches_exact_rates():
    # frozen positions: P(first event = e) = rate(e) / total rate
    rng0 = np.random.default_rng(5)
    pos = rng0.random((8, 2)) * 0.3
    state = np.array([1, 1, 0, 0, 0, 0, 0, 2], dtype=np.int8)
    cfg = make_config(N=8, beta=2.0, alpha=0.7, gamma=0.0, kernel=KernelSpec(radius=0.2))
    pop0 = Population(pos, state)
    rates = infection_rates(pop0, cfg)
    labels = [("recovery", 0), ("recovery", 1)] + [("infection", i) for i in range(2, 7)]
    probs = np.array([cfg.alpha, cfg.alpha] + [rates[i] for i in range(2, 7)])
    probs /= probs.sum()
    counts = dict.fromkeys(labels, 0)
    rng = np.random.default_rng(123)
    for _ in range(20_000):
        pop = pop0.copy()
        while True:
            ev, _ = step(pop, cfg, rng)
            if ev is not None:
                counts[(ev.kind, ev.agent_id)] += 1
                break
    obs = np.array([counts[l] for l in labels])
    live = probs > 0
    assert np.all(obs[~live] == 0)
    assert live.sum() >= 5
    assert stats.chisquare(obs[live], probs[live] * obs.sum()).pvalue > 1e-3
