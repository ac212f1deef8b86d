"""Experiment configuration: one JSON document per run."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from ..limit_pde import PdeConfig
from ..simulator import SimConfig
from ..spectral import TestFunction

MODES = ("simulate", "pde", "lln-compare", "clt-initial", "clt-dynamic", "qv-check", "spectral-diag")
TOP_LEVEL_KEYS = {"mode", "sim", "pde", "n_sweep", "replicates", "seed", "out_dir", "tolerances", "params"}
PDE_KEYS = {"n_grid", "dt", "heat_scheme"}

DEFAULT_TEST_FUNCTION = [[3, 2, 2, 1.0]]


class ConfigError(ValueError):
    """Schema or validation failure in an experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment.

    ``sim`` carries the model (rates, kernel, initial condition, horizon,
    snapshot times); ``pde`` only the numerics of the limit solver, whose
    physics are taken from ``sim``.  ``params`` holds mode-specific knobs.
    """

    mode: str
    sim: Optional[SimConfig] = None
    pde: dict = field(default_factory=dict)
    n_sweep: tuple[int, ...] = ()
    replicates: int = 1
    seed: int = 0
    out_dir: Optional[str] = None
    tolerances: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode != "spectral-diag" and self.sim is None:
            raise ConfigError(f"mode {self.mode!r} needs a 'sim' block")
        sweep = tuple(int(n) for n in self.n_sweep)
        if any(n < 1 for n in sweep) or any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ConfigError("n_sweep must be strictly increasing positive integers")
        object.__setattr__(self, "n_sweep", sweep)
        if int(self.replicates) < 1:
            raise ConfigError("replicates must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        unknown = set(self.pde) - PDE_KEYS
        if unknown:
            raise ConfigError(f"unknown pde fields: {sorted(unknown)}")
        if self.sim is not None:
            try:
                self.pde_config()
            except ValueError as exc:
                raise ConfigError(f"invalid pde block: {exc}") from exc

    def pde_config(self, output_times=()) -> PdeConfig:
        return PdeConfig.from_sim(self.sim, output_times=output_times, **self.pde)

    def sim_for(self, n_agents: Optional[int] = None) -> SimConfig:
        """The embedded model with the experiment seed and optionally another N."""
        d = self.sim.to_dict()
        d["seed"] = self.seed
        if n_agents is not None:
            d["N"] = n_agents
        return SimConfig.from_dict(d)

    def test_function(self, name: str = "phi") -> TestFunction:
        terms = self.params.get("test_functions", {}).get(name, DEFAULT_TEST_FUNCTION)
        return TestFunction([((int(f), int(a), int(b)), float(c)) for f, a, b, c in terms])

    def tolerance(self, key: str, default: float) -> float:
        return float(self.tolerances.get(key, default))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "sim": None if self.sim is None else self.sim.to_dict(),
            "pde": dict(self.pde),
            "n_sweep": list(self.n_sweep),
            "replicates": int(self.replicates),
            "seed": int(self.seed),
            "out_dir": self.out_dir,
            "tolerances": dict(self.tolerances),
            "params": dict(self.params),
        }

    @classmethod
    def from_dict(cls, d: Any) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(d) - TOP_LEVEL_KEYS
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        if "mode" not in d:
            raise ConfigError("configuration needs a 'mode'")
        try:
            sim = SimConfig.from_dict(d["sim"]) if d.get("sim") is not None else None
            return cls(
                mode=d["mode"],
                sim=sim,
                pde=dict(d.get("pde", {})),
                n_sweep=tuple(d.get("n_sweep", ())),
                replicates=int(d.get("replicates", 1)),
                seed=int(d.get("seed", 0)),
                out_dir=d.get("out_dir"),
                tolerances=dict(d.get("tolerances", {})),
                params=dict(d.get("params", {})),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)
