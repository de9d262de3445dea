"""Experiment descriptions and the bundled presets."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..model import ConfigError, NetworkConfig, QedParams, Regime, build_network

# acceptance thresholds used when a spec does not override them
DEFAULT_THRESHOLDS = {
    "breakpoint_error": 0.01,
    "fluid_pointwise_error": 0.5,
    "fluid_band_fraction": 0.95,
    "ssc_granularity_error": 1e-4,
    "nonexp_band": 4.0,
    "wait_prob_error": 0.05,
    "utilization_slope_tol": 0.1,
    "interchange_distance": 0.02,
}

STAGES = ("fluid", "fluid_band", "ssc", "waits", "nonexp", "interchange", "utilization")

# five stations, pairs given 0-based
FIVE_STATION_EDGES = ((0, 1, 0.1), (1, 3, 0.1), (2, 3, 0.1), (2, 4, 0.1), (1, 2, 0.4), (3, 4, 0.2))


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    edges: tuple[tuple[int, int, float], ...]
    lam: float
    mu: float
    r: int
    beta: float
    gamma: float
    regime: str = "limited"
    G: int = 1
    r_grid: tuple[int, ...] = ()
    seeds: tuple[int, ...] = ()
    horizon: float = 3.0
    charging: tuple[str, ...] = ("exp",)
    q0: tuple[float, ...] | None = None  # queue lengths at population r; rescaled for other r
    sample_dt: float = 0.01
    stages: tuple[str, ...] = ()
    arrivals_per_rep: int = 0
    wait_reps: int = 20
    warmup: float = 10.0
    window: tuple[float, float] | None = None
    gap_samples: int = 10_000
    band_width: float = 3.0
    nonexp_window: tuple[float, float] = (1.0, 3.0)
    interchange_r_grid: tuple[int, ...] = ()
    utilization_horizon: float = 2000.0
    utilization_reps: int = 4
    thresholds: Mapping[str, float] = field(default_factory=dict)
    reference: str | None = None  # name of a bundled reference fluid solution
    output_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("experiment needs a name")
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ConfigError(f"unknown stages {unknown}; choose from {STAGES}")
        if self.r_grid and any(b <= a for a, b in zip(self.r_grid, self.r_grid[1:])):
            raise ConfigError("r_grid must be nonempty and strictly increasing")
        unknown = [k for k in self.thresholds if k not in DEFAULT_THRESHOLDS]
        if unknown:
            raise ConfigError(f"unknown thresholds {unknown}; choose from {sorted(DEFAULT_THRESHOLDS)}")
        if self.reference is not None and self.reference not in REFERENCES:
            raise ConfigError(f"unknown reference solution {self.reference!r}")

    def threshold(self, name: str) -> float:
        return float(self.thresholds.get(name, DEFAULT_THRESHOLDS[name]))

    def network(self, r: int | None = None, beta: float | None = None) -> NetworkConfig:
        qed = QedParams(self.beta if beta is None else beta, self.gamma, Regime.parse(self.regime))
        return build_network(self.edges, self.lam, self.mu, self.r if r is None else r, qed, G=self.G)

    def q0_at(self, r: int) -> np.ndarray:
        """Initial queue lengths at population r, keeping q0/r fixed."""
        n = 1 + max(max(i, j) for i, j, _ in self.edges)
        if self.q0 is None:
            return np.zeros(n, dtype=np.int64)
        return np.array([int(round(x * r / self.r)) for x in self.q0], dtype=np.int64)

    def with_overrides(self, **kw: Any) -> "ExperimentSpec":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = dict(self.thresholds)
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExperimentSpec":
        d = dict(data)
        if "preset" in d:
            base = PRESETS[d.pop("preset")]()
            return base.with_overrides(**_tupled(d))
        return cls(**_tupled(d))


def _tupled(d: Mapping) -> dict:
    out = {}
    for k, v in d.items():
        if k == "edges":
            out[k] = tuple((int(a), int(b), float(c)) for a, b, c in v)
        elif isinstance(v, list):
            out[k] = tuple(v)
        else:
            out[k] = v
    return out


def load_experiment(path_or_name: str) -> ExperimentSpec:
    if path_or_name in PRESETS:
        return PRESETS[path_or_name]()
    path = Path(path_or_name)
    if not path.exists():
        raise ConfigError(f"{path_or_name!r} is neither a preset ({', '.join(sorted(PRESETS))}) nor a file")
    with open(path, encoding="utf-8") as fh:
        return ExperimentSpec.from_dict(json.load(fh))


def five_station_reference(t) -> np.ndarray:
    """Published piecewise fluid solution from q0 = 150 at every station, r = 50000.

    Returns queue lengths (r * q-bar) with shape (len(t), 5).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    t1, t2, t3, t4 = FIVE_STATION_BREAKPOINTS
    e = np.exp(-t)
    e14 = np.exp(1.4 - t)
    q1 = np.select([t <= t3, t <= t4], [150 - 62.5 * t, 62.5 * e14], 62.5 + 195 / 64 * e14 - 517 / 16 * e)
    q2 = np.select(
        [t <= t2, t <= t3, t <= t4],
        [498.5 + 0.625 * t - 348.5 * e,
         75 * t / 152 + 14955 / 38 - 7755 / 38 * e,
         7500 / 19 - 75 / 152 * e14 - 7755 / 38 * e],
        375 + 585 / 32 * e14 - 1551 / 8 * e,
    )
    q4 = np.select(
        [t <= t1, t <= t2, t <= t3, t <= t4],
        [249.25 + 0.3125 * t - 99.25 * e,
         997 / 7 + 5 / 28 * t + 29 * e,
         4985 / 19 + 25 / 76 * t - 2585 / 19 * e,
         5000 / 19 - 25 / 76 * e14 - 2585 / 19 * e],
        250 + 195 / 16 * e14 - 129.25 * e,
    )
    q5 = np.select(
        [t <= t1, t <= t2, t <= t3, t <= t4],
        [150 * e,
         15 * t / 112 + 2991 / 28 + 87 / 4 * e,
         14955 / 76 + 75 / 304 * t - 7755 / 76 * e,
         3750 / 19 - 75 / 304 * e14 - 7755 / 76 * e],
        187.5 + 585 / 64 * e14 - 1551 / 16 * e,
    )
    return np.column_stack([q1, q2, q2, q4, q5])


FIVE_STATION_BREAKPOINTS = (0.1826, 0.3189, 1.4, 1.4758)
REFERENCES = {"five_station": (five_station_reference, FIVE_STATION_BREAKPOINTS)}


def preset_five_station(beta: float = 1.0, gamma: float = 0.0) -> ExperimentSpec:
    """Five-station network, lambda=0.025, mu=1, r=50000, q0=150 everywhere.

    The waiting-probability stage runs 20 replications, each stopped after
    2.5 million arrivals.
    """
    return ExperimentSpec(
        name="five_station",
        edges=FIVE_STATION_EDGES,
        lam=0.025,
        mu=1.0,
        r=50_000,
        beta=beta,
        gamma=gamma,
        r_grid=(5_000, 20_000, 50_000),
        seeds=tuple(range(100)),
        horizon=3.0,
        charging=("det:1", "unif:0.75,1.25"),
        q0=(150.0,) * 5,
        sample_dt=0.01,
        stages=("fluid", "fluid_band", "ssc", "nonexp", "waits", "utilization"),
        arrivals_per_rep=2_500_000,
        thresholds={
            "breakpoint_error": 0.01,
            "fluid_pointwise_error": 0.5,
            "wait_prob_error": 0.05,
            "utilization_slope_tol": 0.1,
        },
        reference="five_station",
    )


def preset_five_station_quick() -> ExperimentSpec:
    """Same network at smoke-test size (minutes become seconds)."""
    return replace(
        preset_five_station(),
        name="five_station_quick",
        seeds=tuple(range(20)),
        arrivals_per_rep=250_000,
        thresholds={
            "breakpoint_error": 0.01,
            "fluid_pointwise_error": 0.5,
            "wait_prob_error": 0.08,
            "utilization_slope_tol": 0.1,
        },
        gap_samples=2_000,
        utilization_horizon=500.0,
    )


def preset_single_station_interchange() -> ExperimentSpec:
    """One station, lambda=mu=1, beta=1, gamma=0.5, exact law against its limit."""
    return ExperimentSpec(
        name="single_station_interchange",
        edges=((0, 0, 1.0),),
        lam=1.0,
        mu=1.0,
        r=100_000,
        beta=1.0,
        gamma=0.5,
        G=10**9,
        stages=("interchange",),
        seeds=(0,),
        interchange_r_grid=(1_000, 10_000, 100_000),
        thresholds={"interchange_distance": 0.02},
    )


PRESETS = {
    "five_station": preset_five_station,
    "five_station_quick": preset_five_station_quick,
    "single_station_interchange": preset_single_station_interchange,
}

