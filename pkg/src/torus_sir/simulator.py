"""Exact simulation of the spatial SIR particle system on the unit torus.

Agents move as independent Brownian motions with generator ``gamma * Laplacian``.
A susceptible agent i is infected at rate

    beta * sum_{j infected} K(X_i, X_j) / sum_l K(X_l, X_j)

and an infected agent recovers at rate ``alpha``.  Events are generated by
thinning against the constant envelope ``(alpha + beta) * I``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .spectral import TestFunction
from .torus import KernelSpec, infection_pressure, torus_distance_sq, wrap_array

SUSCEPTIBLE, INFECTED, RECOVERED = 0, 1, 2
STATE_NAMES = ("S", "I", "R")
MAX_REJECTION_ROUNDS = 10_000
QUAD_STEP = 0.01


# --- initial condition ---------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle ``[lo, hi)`` or torus disc, with exact membership."""

    shape: str = "all"
    lo: tuple[float, float] = (0.0, 0.0)
    hi: tuple[float, float] = (1.0, 1.0)
    center: tuple[float, float] = (0.5, 0.5)
    radius: float = 0.0

    def __post_init__(self):
        if self.shape not in ("all", "none", "rect", "disc"):
            raise ValueError(f"unknown region shape {self.shape!r}")
        if self.shape == "rect" and not all(0 <= a <= b <= 1 for a, b in zip(self.lo, self.hi)):
            raise ValueError("rectangle needs 0 <= lo <= hi <= 1")
        if self.shape == "disc" and not (0 < self.radius < 0.5):
            raise ValueError("disc radius must lie in (0, 1/2)")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.shape == "all":
            return np.ones(len(pts), dtype=bool)
        if self.shape == "none":
            return np.zeros(len(pts), dtype=bool)
        if self.shape == "rect":
            return np.all((pts >= self.lo) & (pts < self.hi), axis=1)
        return torus_distance_sq(pts, np.asarray(self.center)) < self.radius**2

    def to_dict(self) -> dict:
        if self.shape in ("all", "none"):
            return {"shape": self.shape}
        if self.shape == "rect":
            return {"shape": "rect", "lo": list(self.lo), "hi": list(self.hi)}
        return {"shape": "disc", "center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        d = dict(d)
        for key in ("lo", "hi", "center"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


def cell_centres(n_grid: int) -> np.ndarray:
    x = (np.arange(n_grid) + 0.5) / n_grid
    return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class Density:
    """Piecewise-constant probability density on a cell grid.

    ``kind`` is "uniform" (g = 1) or "cosine" with
    g = 1 + amplitude * cos(2 pi k1 x1) cos(2 pi k2 x2).
    The declared window ``[delta1, delta2]`` must bound g on the grid.
    """

    kind: str = "uniform"
    amplitude: float = 0.0
    k1: int = 1
    k2: int = 1
    n_grid: int = 128
    delta1: Optional[float] = None
    delta2: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "cosine"):
            raise ValueError(f"unknown density kind {self.kind!r}")
        if self.kind == "cosine" and not (0 <= abs(self.amplitude) < 1):
            raise ValueError("cosine amplitude must lie in [0, 1)")
        if self.n_grid < 4 or self.n_grid & (self.n_grid - 1):
            raise ValueError("density grid size must be a power of two")
        lo = 1.0 - abs(self.amplitude) if self.kind == "cosine" else 1.0
        hi = 1.0 + abs(self.amplitude) if self.kind == "cosine" else 1.0
        object.__setattr__(self, "delta1", lo if self.delta1 is None else float(self.delta1))
        object.__setattr__(self, "delta2", hi if self.delta2 is None else float(self.delta2))
        if not 0 < self.delta1 <= self.delta2:
            raise ValueError("need 0 < delta1 <= delta2")
        g = self.grid()
        if g.min() < self.delta1 - 1e-12 or g.max() > self.delta2 + 1e-12:
            raise ValueError("density leaves its declared [delta1, delta2] window")
        if abs(g.mean() - 1.0) > 1e-9:
            raise ValueError("density must integrate to 1")

    def grid(self, n_grid: Optional[int] = None) -> np.ndarray:
        n = self.n_grid if n_grid is None else n_grid
        if self.kind == "uniform":
            return np.ones((n, n))
        c = cell_centres(n)
        return 1.0 + self.amplitude * np.cos(2 * np.pi * self.k1 * c[..., 0]) * np.cos(2 * np.pi * self.k2 * c[..., 1])

    def lookup(self, pts: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return np.ones(len(pts))
        n = self.n_grid
        idx = np.minimum((np.asarray(pts) * n).astype(np.int64), n - 1)
        return self.grid()[idx[:, 0], idx[:, 1]]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("kind", "amplitude", "k1", "k2", "n_grid", "delta1", "delta2")}

    @classmethod
    def from_dict(cls, d: dict) -> "Density":
        return cls(**d)


@dataclass(frozen=True)
class InitialCondition:
    region: Region = field(default_factory=Region)
    p: float = 0.01
    density: Density = field(default_factory=Density)

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"region": self.region.to_dict(), "p": self.p, "density": self.density.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialCondition":
        return cls(
            region=Region.from_dict(d.get("region", {"shape": "all"})),
            p=float(d.get("p", 0.01)),
            density=Density.from_dict(d.get("density", {"kind": "uniform"})),
        )


@dataclass(frozen=True)
class SimConfig:
    N: int
    beta: float
    alpha: float
    gamma: float
    kernel: KernelSpec = field(default_factory=KernelSpec)
    initial: InitialCondition = field(default_factory=InitialCondition)
    T: float = 1.0
    snapshot_times: tuple[float, ...] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if self.beta < 0 or self.alpha <= 0 or self.gamma < 0:
            raise ValueError("need beta >= 0, alpha > 0, gamma >= 0")
        if self.T < 0:
            raise ValueError("horizon T must be non-negative")
        ts = tuple(float(t) for t in self.snapshot_times)
        if list(ts) != sorted(ts) or any(t < 0 or t > self.T for t in ts):
            raise ValueError("snapshot_times must be sorted and lie in [0, T]")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "snapshot_times", ts)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "beta": self.beta,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "kernel": self.kernel.to_dict(),
            "initial": self.initial.to_dict(),
            "T": self.T,
            "snapshot_times": list(self.snapshot_times),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["kernel"] = KernelSpec.from_dict(d.get("kernel", {}))
        d["initial"] = InitialCondition.from_dict(d.get("initial", {}))
        if "snapshot_times" in d:
            d["snapshot_times"] = tuple(d["snapshot_times"])
        return cls(**d)


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Independent stream per replicate, derived from (seed, replicate)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(replicate,))))


# --- population and events -----------------------------------------------------------


@dataclass
class Population:
    pos: np.ndarray
    state: np.ndarray
    t: float = 0.0

    @property
    def N(self) -> int:
        return len(self.state)

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.state, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])

    def copy(self) -> "Population":
        return Population(self.pos.copy(), self.state.copy(), self.t)


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    agent_id: int


def sample_positions(density: Density, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rejection sampling from g against the bound delta2."""
    if density.kind == "uniform":
        return rng.random((n, 2))
    out = np.empty((0, 2))
    for _ in range(MAX_REJECTION_ROUNDS):
        need = n - len(out)
        if need == 0:
            return out
        batch = max(16, int(need * density.delta2 * 1.2))
        x = rng.random((batch, 2))
        keep = rng.random(batch) * density.delta2 < density.lookup(x)
        out = np.concatenate([out, x[keep][:need]])
    raise RuntimeError("rejection sampling did not finish; density exceeds its declared delta2?")


def sample_initial(config: SimConfig, rng: np.random.Generator) -> Population:
    ic = config.initial
    pos = sample_positions(ic.density, config.N, rng)
    in_a = ic.region.contains(pos)
    coin = rng.random(config.N) < ic.p
    state = np.where(in_a & coin, INFECTED, SUSCEPTIBLE).astype(np.int8)
    return Population(pos, state, 0.0)


def infection_rates(pop: Population, config: SimConfig) -> np.ndarray:
    """Exact infection rate of every agent (zero for non-susceptibles)."""
    return config.beta * infection_pressure(config.kernel, pop.pos, pop.state)


def infection_rate(i: int, pop: Population, config: SimConfig) -> float:
    if pop.state[i] != SUSCEPTIBLE:
        raise ValueError(f"agent {i} is not susceptible")
    return float(infection_rates(pop, config)[i])


def total_event_rate_bound(pop: Population, config: SimConfig) -> float:
    return (config.alpha + config.beta) * int(np.count_nonzero(pop.state == INFECTED))


# --- event loop ----------------------------------------------------------------------


class Observer(Protocol):
    def start(self, pop: Population) -> None: ...

    def integrate(self, pop: Population, weight: float) -> None: ...

    def mark(self, pop: Population) -> None: ...


def _diffuse(pop: Population, dt: float, gamma: float, rng: np.random.Generator) -> None:
    if gamma > 0 and dt > 0:
        pop.pos += rng.standard_normal(pop.pos.shape) * math.sqrt(2.0 * gamma * dt)
        wrap_array(pop.pos)
    pop.t += dt


def advance(pop: Population, t_target: float, gamma: float, rng, observers: Sequence[Observer] = ()) -> None:
    """Move all agents to ``t_target``, feeding midpoint samples to observers."""
    gap = t_target - pop.t
    if gap <= 0:
        pop.t = max(pop.t, t_target)
        return
    if not observers:
        _diffuse(pop, gap, gamma, rng)
    else:
        n_sub = max(1, math.ceil(gap / QUAD_STEP - 1e-9))
        h = gap / n_sub
        for _ in range(n_sub):
            _diffuse(pop, 0.5 * h, gamma, rng)
            for ob in observers:
                ob.integrate(pop, h)
            _diffuse(pop, 0.5 * h, gamma, rng)
    pop.t = t_target


def _decide(pop: Population, config: SimConfig, rng: np.random.Generator) -> Optional[EventRecord]:
    """Resolve one proposal of the envelope clock.

    The proposal picks an infected source j uniformly and a mark u in
    [0, alpha + beta).  u < alpha means j recovers.  Otherwise j infects with
    probability sum_{i in S} K_ij / sum_l K_lj, the target drawn with weight K_ij.
    """
    infected = np.flatnonzero(pop.state == INFECTED)
    j = int(infected[rng.integers(len(infected))])
    u = rng.random() * (config.alpha + config.beta)
    if u < config.alpha:
        pop.state[j] = RECOVERED
        return EventRecord(pop.t, "recovery", j)
    k = config.kernel.profile(torus_distance_sq(pop.pos, pop.pos[j]))
    colsum = k.sum()
    if not colsum > 0:
        raise RuntimeError("zero kernel column sum")
    k_sus = np.where(pop.state == SUSCEPTIBLE, k, 0.0)
    weight = k_sus.sum()
    accept = weight / colsum
    assert accept <= 1.0 + 1e-12
    if (u - config.alpha) / config.beta >= accept:
        return None
    cum = np.cumsum(k_sus)
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    i = min(i, len(cum) - 1)
    while k_sus[i] == 0.0:  # guard against landing on a zero-width bin at the end
        i -= 1
    pop.state[i] = INFECTED
    return EventRecord(pop.t, "infection", i)


def step(
    pop: Population,
    config: SimConfig,
    rng: np.random.Generator,
    t_limit: float = math.inf,
    observers: Sequence[Observer] = (),
    check_rates: bool = False,
) -> tuple[Optional[EventRecord], bool]:
    """One thinning proposal.

    Returns ``(event, reached_limit)``.  If the next proposal falls at or past
    ``t_limit`` (or nobody is infected) positions are advanced to ``t_limit``
    and no event occurs; the pending exponential clock is discarded, which is
    exact by memorylessness.
    """
    n_inf = int(np.count_nonzero(pop.state == INFECTED))
    if n_inf == 0:
        if math.isfinite(t_limit):
            advance(pop, t_limit, config.gamma, rng, observers)
        return None, True
    envelope = (config.alpha + config.beta) * n_inf
    dt = 0.0
    while dt == 0.0 or pop.t + dt == pop.t:
        dt = rng.exponential(1.0 / envelope)
    t_prop = pop.t + dt
    if t_prop >= t_limit:
        advance(pop, t_limit, config.gamma, rng, observers)
        return None, True
    advance(pop, t_prop, config.gamma, rng, observers)
    if check_rates:
        total = infection_rates(pop, config).sum() + config.alpha * n_inf
        if total > envelope * (1 + 1e-12):
            raise AssertionError(f"rate {total} exceeds envelope {envelope}")
    return _decide(pop, config, rng), False


@dataclass
class Snapshot:
    time: float
    pos: np.ndarray
    state: np.ndarray

    def counts(self) -> tuple[int, int, int]:
        c = np.bincount(self.state, minlength=3)
        return int(c[0]), int(c[1]), int(c[2])


@dataclass
class RunResult:
    config: SimConfig
    events: list[EventRecord]
    snapshots: list[Snapshot]
    replicate: int = 0

    def snapshot_at(self, t: float) -> Snapshot:
        for s in self.snapshots:
            if s.time == t:
                return s
        raise KeyError(t)


def run(
    config: SimConfig,
    replicate: int = 0,
    observers: Sequence[Observer] = (),
    check_rates: bool = False,
) -> RunResult:
    """Simulate one replicate up to ``config.T``.

    Observers change how the diffusion is sampled (midpoint sub-steps), so a
    tracked run and an untracked run with the same seed are different
    realisations of the same law.
    """
    rng = replicate_rng(config.seed, replicate)
    pop = sample_initial(config, rng)
    for ob in observers:
        ob.start(pop)
    events: list[EventRecord] = []
    snaps: list[Snapshot] = []
    targets = list(config.snapshot_times)
    if not targets or targets[-1] < config.T:
        targets.append(config.T)
    wanted = set(config.snapshot_times)
    for target in targets:
        while True:
            ev, reached = step(pop, config, rng, target, observers, check_rates)
            if ev is not None:
                events.append(ev)
            if reached:
                break
        if target in wanted:
            snaps.append(Snapshot(target, pop.pos.copy(), pop.state.copy()))
            for ob in observers:
                ob.mark(pop)
    return RunResult(config, events, snaps, replicate)


# --- empirical measures --------------------------------------------------------------


@dataclass
class WeightedPoints:
    points: np.ndarray
    weights: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def pair(self, phi) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(self.weights @ phi(self.points))


def empirical_measures(snap: Snapshot) -> dict[str, WeightedPoints]:
    """mu^S, mu^I, mu^R and mu^N of a snapshot, each atom carrying weight 1/N."""
    n = len(snap.state)
    out = {}
    for name, code in zip(STATE_NAMES, (SUSCEPTIBLE, INFECTED, RECOVERED)):
        sel = snap.state == code
        out[name] = WeightedPoints(snap.pos[sel], np.full(int(sel.sum()), 1.0 / n))
    out["N"] = WeightedPoints(snap.pos, np.full(n, 1.0 / n))
    return out


# --- martingale tracking -------------------------------------------------------------


@dataclass
class MartingaleTrack:
    """sqrt(N)-scaled martingales of the S, I and total pairings, with predicted brackets."""

    times: list[float] = field(default_factory=list)
    M: list[float] = field(default_factory=list)
    L: list[float] = field(default_factory=list)
    H: list[float] = field(default_factory=list)
    qv_M: list[float] = field(default_factory=list)
    qv_L: list[float] = field(default_factory=list)
    qv_H: list[float] = field(default_factory=list)
    qv_ML: list[float] = field(default_factory=list)

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v) for k, v in self.__dict__.items()}


class MartingaleTracker:
    """Accumulates drift and bracket integrals along a run.

    For a test function phi with closed-form gradient and Laplacian,

      M = (mu^S_t, phi) - (mu^S_0, phi) - gamma int (mu^S, lap phi) + beta int D1
      L = (mu^I_t, phi) - (mu^I_0, phi) - gamma int (mu^I, lap phi) - beta int D1 + alpha int (mu^I, phi)
      H = (mu^N_t, phi) - (mu^N_0, phi) - gamma int (mu^N, lap phi)

    with D1 = (mu^S, phi P), P_i = sum_{j in I} K_ij / sum_l K_lj.  Brackets use
    D2 = (mu^S, phi^2 P) and the |grad phi|^2 pairings.  All values are scaled by sqrt(N).
    """

    # accumulator slots
    _LAP_S, _LAP_I, _LAP_N, _D1, _D2, _PHI_I, _PHI2_I, _G_S, _G_I, _G_N = range(10)

    def __init__(self, phi: TestFunction, config: SimConfig):
        self.phi = phi
        self.cfg = config
        self.track = MartingaleTrack()
        self._acc = np.zeros(10)
        self._start = np.zeros(3)

    def _pairings(self, pop: Population) -> np.ndarray:
        v = self.phi(pop.pos)
        s = pop.state == SUSCEPTIBLE
        i = pop.state == INFECTED
        return np.array([v[s].sum(), v[i].sum(), v.sum()]) / pop.N

    def start(self, pop: Population) -> None:
        self._start = self._pairings(pop)
        self._acc[:] = 0.0

    def integrate(self, pop: Population, weight: float) -> None:
        s = pop.state == SUSCEPTIBLE
        i = pop.state == INFECTED
        v, lap, g2 = self.phi.evaluate(pop.pos)
        vals = np.zeros(10)
        vals[self._LAP_S:self._LAP_N + 1] = lap[s].sum(), lap[i].sum(), lap.sum()
        if self.cfg.beta > 0 and i.any() and s.any():
            pr = infection_pressure(self.cfg.kernel, pop.pos, pop.state)
            vals[self._D1] = (v * pr)[s].sum()
            vals[self._D2] = (v * v * pr)[s].sum()
        vals[self._PHI_I] = v[i].sum()
        vals[self._PHI2_I] = (v * v)[i].sum()
        if self.cfg.gamma > 0:
            vals[self._G_S:self._G_N + 1] = g2[s].sum(), g2[i].sum(), g2.sum()
        self._acc += weight * vals / pop.N

    def mark(self, pop: Population) -> None:
        c = self.cfg
        a = self._acc
        dS, dI, dN = self._pairings(pop) - self._start
        rootn = math.sqrt(pop.N)
        tr = self.track
        tr.times.append(pop.t)
        tr.M.append(rootn * (dS - c.gamma * a[self._LAP_S] + c.beta * a[self._D1]))
        tr.L.append(rootn * (dI - c.gamma * a[self._LAP_I] - c.beta * a[self._D1] + c.alpha * a[self._PHI_I]))
        tr.H.append(rootn * (dN - c.gamma * a[self._LAP_N]))
        tr.qv_M.append(c.beta * a[self._D2] + 2 * c.gamma * a[self._G_S])
        tr.qv_L.append(c.beta * a[self._D2] + 2 * c.gamma * a[self._G_I] + c.alpha * a[self._PHI2_I])
        tr.qv_H.append(2 * c.gamma * a[self._G_N])
        tr.qv_ML.append(-c.beta * a[self._D2])


def track_martingale(config: SimConfig, phi: TestFunction, replicate: int = 0) -> tuple[RunResult, MartingaleTrack]:
    """Run one replicate while accumulating the martingale decomposition of (mu, phi).

    Values are reported at ``config.snapshot_times``; a snapshot at t=0 reads 0.
    """
    tracker = MartingaleTracker(phi, config)
    result = run(config, replicate, observers=[tracker])
    return result, tracker.track


# --- serialisation -------------------------------------------------------------------

EVENTLOG_SCHEMA = "# schema: torus_sir/eventlog/1"
SNAPSHOT_SCHEMA = "# schema: torus_sir/snapshots/1"


def events_to_csv(events: Sequence[EventRecord]) -> str:
    buf = io.StringIO()
    buf.write(EVENTLOG_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "kind", "agent_id"])
    for e in events:
        w.writerow([repr(e.time), e.kind, e.agent_id])
    return buf.getvalue()


def events_from_csv(text: str) -> list[EventRecord]:
    rows = csv.DictReader(line for line in text.splitlines() if not line.startswith("#"))
    return [EventRecord(float(r["time"]), r["kind"], int(r["agent_id"])) for r in rows]


def snapshots_to_csv(snaps: Sequence[Snapshot], positions: bool = True) -> str:
    buf = io.StringIO()
    buf.write(SNAPSHOT_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", "agent_id", "x1", "x2", "state"] if positions else ["time", "agent_id", "state"])
    for s in snaps:
        for k, st in enumerate(s.state):
            name = STATE_NAMES[st]
            if positions:
                w.writerow([repr(s.time), k, repr(float(s.pos[k, 0])), repr(float(s.pos[k, 1])), name])
            else:
                w.writerow([repr(s.time), k, name])
    return buf.getvalue()


def summary_records(result: RunResult, track: Optional[MartingaleTrack] = None) -> list[dict]:
    """One JSON-serialisable record per snapshot."""
    out = []
    for k, s in enumerate(result.snapshots):
        S, I, R = s.counts()
        rec = {"replicate": result.replicate, "time": s.time, "S": S, "I": I, "R": R}
        if track is not None:
            for key, vals in track.as_arrays().items():
                if key != "times":
                    rec[key] = float(vals[k])
        out.append(rec)
    return out


def summary_to_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
