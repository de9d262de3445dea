"""Simulation front end: buffers, seeding and result containers."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from ..model import NetworkConfig
from . import kernels as K
from .rng import UniformStream

UNIFORM_BLOCK = 1 << 18


@dataclass(frozen=True)
class ChargingDist:
    """Charging-time law: exponential(rate), deterministic(value) or uniform(lo, hi)."""

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("exp", "det", "unif"):
            raise ValueError(f"unknown charging law {self.kind!r}")
        if not (self.a > 0 and math.isfinite(self.a)):
            raise ValueError("charging parameters must be positive and finite")
        if self.kind == "unif" and not (0 < self.a <= self.b < math.inf):
            raise ValueError("uniform charging needs 0 < lo <= hi")

    @classmethod
    def exponential(cls, rate: float) -> "ChargingDist":
        return cls("exp", float(rate))

    @classmethod
    def deterministic(cls, value: float) -> "ChargingDist":
        return cls("det", float(value))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "ChargingDist":
        return cls("unif", float(lo), float(hi))

    @classmethod
    def parse(cls, text: str, mu: float) -> "ChargingDist":
        """``exp`` (rate mu), ``exp:RATE``, ``det:V`` or ``unif:LO,HI``."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        try:
            if name == "exp":
                return cls.exponential(float(arg) if arg else mu)
            if name == "det":
                return cls.deterministic(float(arg) if arg else 1.0 / mu)
            if name == "unif":
                lo, hi = (float(x) for x in arg.split(","))
                return cls.uniform(lo, hi)
        except ValueError as exc:
            raise ValueError(f"bad charging law {text!r}: {exc}") from None
        raise ValueError(f"bad charging law {text!r}")

    @property
    def mean(self) -> float:
        if self.kind == "exp":
            return 1.0 / self.a
        if self.kind == "det":
            return self.a
        return 0.5 * (self.a + self.b)

    @property
    def code(self) -> int:
        return {"exp": K.CHARGE_EXP, "det": K.CHARGE_DET, "unif": K.CHARGE_UNIF}[self.kind]

    def __str__(self) -> str:
        if self.kind == "exp":
            return f"exp:{self.a:g}"
        if self.kind == "det":
            return f"det:{self.a:g}"
        return f"unif:{self.a:g},{self.b:g}"


@dataclass(frozen=True)
class StationState:
    """Snapshot of one station; derived counts follow from q and capacities."""

    q: int
    charging: int
    waiting_evs: int
    full_spares: int

    @classmethod
    def from_counts(cls, q: int, charging: int, waiting_evs: int, B: int) -> "StationState":
        return cls(int(q), int(charging), int(waiting_evs), max(int(B) - int(q), 0))

    def violations(self, B: int, F: float) -> list[str]:
        out = []
        if self.full_spares > 0 and self.waiting_evs > 0:
            out.append("full spare battery on the shelf while EVs wait")
        if self.charging != min(self.q, F):
            out.append(f"charging={self.charging} but min(q,F)={min(self.q, F)}")
        if self.waiting_evs != max(self.q - B, 0):
            out.append(f"waiting={self.waiting_evs} but (q-B)^+={max(self.q - B, 0)}")
        if self.full_spares != max(B - self.q, 0):
            out.append("full spare count inconsistent")
        return out


@dataclass
class ArrivalRecords:
    time: np.ndarray
    edge: np.ndarray
    station: np.ndarray
    waited: np.ndarray  # bool
    wait: np.ndarray  # nan while still waiting at the end of the run

    def __len__(self) -> int:
        return self.time.size


@dataclass
class SimPath:
    sample_times: np.ndarray
    q: np.ndarray  # (n_samples, S) batteries in need of charging
    charging: np.ndarray  # (n_samples, S) batteries on a charger
    waiting: np.ndarray  # (n_samples, S) EVs waiting for a full battery
    driving: np.ndarray  # (n_samples,) EVs on the road
    arrivals: ArrivalRecords
    occupancy: np.ndarray  # (S, max level + 1) time spent at each queue length
    event_count: int
    end_time: float
    seed: int
    rep: int
    B: np.ndarray
    F: np.ndarray
    r: int
    event_violations: int
    final_q: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def q_samples(self) -> np.ndarray:
        return self.q

    @property
    def n_stations(self) -> int:
        return self.B.size

    def station_state(self, k: int, j: int) -> StationState:
        return StationState.from_counts(self.q[k, j], self.charging[k, j], self.waiting[k, j], self.B[j])


def route(q: Sequence[int], pair: tuple[int, int], p: Sequence[float], rng: np.random.Generator) -> int:
    """Station of the pair with the smaller q/p; a fair coin settles exact ties.

    The comparison q_i*p_j vs q_j*p_i is done in exact rational arithmetic.
    """
    i, j = pair
    if i == j:
        return i
    pi = Fraction(repr(float(p[i])))
    pj = Fraction(repr(float(p[j])))
    a = int(q[i]) * pj
    b = int(q[j]) * pi
    if a < b:
        return i
    if a > b:
        return j
    return i if rng.random() < 0.5 else j


def sample_grid(horizon: float, sample_dt: float | None) -> np.ndarray:
    if sample_dt is None or not math.isfinite(horizon):
        return np.zeros(0)
    if not sample_dt > 0:
        raise ValueError("sample_dt must be positive")
    n = int(math.floor(horizon / sample_dt + 1e-9))
    grid = np.arange(n + 1) * sample_dt
    if grid[-1] < horizon * (1 - 1e-12):
        grid = np.append(grid, horizon)
    return grid


class _Run:
    """Buffers shared by both event loops."""

    def __init__(self, config: NetworkConfig, q0, horizon: float, sample_dt: float | None, seed: int, rep: int,
                 max_arrivals: int | None, max_events: int | None, expected_arrivals: int):
        S = config.n_stations
        q0 = np.asarray(q0 if q0 is not None else np.zeros(S), dtype=np.int64).copy()
        if q0.shape != (S,):
            raise ValueError(f"q0 needs {S} entries")
        if not (horizon > 0):
            raise ValueError("horizon must be positive")
        if math.isinf(horizon) and max_arrivals is None and max_events is None:
            raise ValueError("an infinite horizon needs max_arrivals or max_events")
        self.B = config.B.astype(np.int64)
        self.F = config.finite_F()
        if np.any(q0 < 0) or np.any(q0 > self.B + config.r):
            raise ValueError("q0 infeasible: need 0 <= q0_j <= B_j + r")
        waiting0 = np.maximum(q0 - self.B, 0)
        if waiting0.sum() > config.r:
            raise ValueError("q0 infeasible: more waiting EVs than the population")
        self.config = config
        self.seed, self.rep = int(seed), int(rep)
        self.horizon = float(horizon)
        self.max_arrivals = -1 if max_arrivals is None else int(max_arrivals)
        self.max_events = -1 if max_events is None else int(max_events)
        self.q = q0
        self.busy = np.minimum(q0, self.F).astype(np.int64)
        self.t = np.zeros(1)
        self.counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.counters[K.C_L] = config.r - int(waiting0.sum())
        cap = max(config.r, 1)
        self.fifo = np.full((S, cap), -1, dtype=np.int64)
        self.f_head = np.zeros(S, dtype=np.int64)
        self.f_len = waiting0.astype(np.int64)
        n_rec = max(1024, min(expected_arrivals, 50_000_000))
        self._alloc_records(n_rec)
        self.t_samples = sample_grid(self.horizon, sample_dt)
        n_s = self.t_samples.size
        self.s_q = np.zeros((n_s, S), dtype=np.int64)
        self.s_busy = np.zeros((n_s, S), dtype=np.int64)
        self.s_wait = np.zeros((n_s, S), dtype=np.int64)
        self.s_L = np.zeros(n_s, dtype=np.int64)
        self.occ = np.zeros((S, int(self.B.max()) + config.r + 1))
        e = config.edges
        self.e_i = np.array([x.i for x in e], dtype=np.int64)
        self.e_j = np.array([x.j for x in e], dtype=np.int64)
        cum = np.cumsum([x.p for x in e])
        cum[-1] = 1.0
        self.e_cum = cum
        self.w = config.route_weights
        self.stream = UniformStream(self.seed, self.rep, UNIFORM_BLOCK)
        self.u = self.stream.next_block()

    def _alloc_records(self, n: int) -> None:
        self.rec_time = np.zeros(n)
        self.rec_edge = np.zeros(n, dtype=np.int64)
        self.rec_station = np.zeros(n, dtype=np.int64)
        self.rec_waited = np.zeros(n, dtype=np.uint8)
        self.rec_wait = np.zeros(n)

    def grow_records(self) -> None:
        n = self.rec_time.size
        old = (self.rec_time, self.rec_edge, self.rec_station, self.rec_waited, self.rec_wait)
        self._alloc_records(2 * n)
        for new, prev in zip((self.rec_time, self.rec_edge, self.rec_station, self.rec_waited, self.rec_wait), old):
            new[:n] = prev

    def drive(self, call: Callable[[], int]) -> None:
        while True:
            status = call()
            if status == K.DONE:
                return
            if status == K.NEED_UNIFORMS:
                self.u = self.stream.next_block()
                self.counters[K.C_UPOS] = 0
            elif status == K.NEED_RECORDS:
                self.grow_records()
            else:  # pragma: no cover
                raise RuntimeError(f"event loop returned unknown status {status}")

    def result(self) -> SimPath:
        n = int(self.counters[K.C_ARRIVALS])
        arrivals = ArrivalRecords(
            self.rec_time[:n].copy(),
            self.rec_edge[:n].copy(),
            self.rec_station[:n].copy(),
            self.rec_waited[:n].astype(bool),
            self.rec_wait[:n].copy(),
        )
        return SimPath(
            sample_times=self.t_samples,
            q=self.s_q,
            charging=self.s_busy,
            waiting=self.s_wait,
            driving=self.s_L,
            arrivals=arrivals,
            occupancy=self.occ,
            event_count=int(self.counters[K.C_EVENTS]),
            end_time=float(self.t[0]),
            seed=self.seed,
            rep=self.rep,
            B=self.B.copy(),
            F=self.config.F.copy(),
            r=self.config.r,
            event_violations=int(self.counters[K.C_VIOLATIONS]),
            final_q=self.q.copy(),
        )


def _expected_arrivals(config: NetworkConfig, horizon: float, max_arrivals: int | None) -> int:
    if max_arrivals is not None:
        return int(max_arrivals)
    if not math.isfinite(horizon):
        return 1 << 16
    return int(1.1 * config.lam * config.r * horizon) + 1024


def run_ctmc(config: NetworkConfig, q0=None, horizon: float = 1.0, sample_dt: float | None = None, seed: int = 0,
             rep: int = 0, max_arrivals: int | None = None, max_events: int | None = None) -> SimPath:
    """Exact jump-chain simulation with exponential(mu) charging."""
    run = _Run(config, q0, horizon, sample_dt, seed, rep, max_arrivals, max_events,
               _expected_arrivals(config, horizon, max_arrivals))

    def call() -> int:
        return K.ctmc_loop(float(config.lam), float(config.mu), run.B, run.F, run.w, run.e_i, run.e_j, run.e_cum,
                           run.horizon, run.max_arrivals, run.max_events,
                           run.q, run.busy, run.t, run.counters, run.fifo, run.f_head, run.f_len,
                           run.rec_time, run.rec_edge, run.rec_station, run.rec_waited, run.rec_wait,
                           run.t_samples, run.s_q, run.s_busy, run.s_wait, run.s_L, run.occ, run.u)

    run.drive(call)
    return run.result()


def run_des(config: NetworkConfig, charging: ChargingDist | None = None, q0=None, horizon: float = 1.0,
            sample_dt: float | None = None, seed: int = 0, rep: int = 0, max_arrivals: int | None = None,
            max_events: int | None = None) -> SimPath:
    """Event-driven simulation tracking each battery's charge completion time."""
    charging = charging or ChargingDist.exponential(config.mu)
    run = _Run(config, q0, horizon, sample_dt, seed, rep, max_arrivals, max_events,
               _expected_arrivals(config, horizon, max_arrivals))
    cap = int(run.F.sum())
    h_time = np.full(cap + 1, np.inf)
    h_st = np.zeros(cap + 1, dtype=np.int64)
    # batteries already on a charger at time 0 get fresh durations, drawn
    # from the head of the stream in station order
    init = np.repeat(np.arange(config.n_stations), run.busy)
    if init.size:
        draws = run.stream.initial_draws(init.size)
        for s, x in zip(init, draws):
            K.heap_push(h_time, h_st, run.counters, K.charge_duration(charging.code, charging.a, charging.b, x), s)

    def call() -> int:
        return K.des_loop(float(config.lam), charging.code, charging.a, charging.b, run.B, run.F, run.w,
                          run.e_i, run.e_j, run.e_cum, run.horizon, run.max_arrivals, run.max_events,
                          run.q, run.busy, run.t, run.counters, run.fifo, run.f_head, run.f_len, h_time, h_st,
                          run.rec_time, run.rec_edge, run.rec_station, run.rec_waited, run.rec_wait,
                          run.t_samples, run.s_q, run.s_busy, run.s_wait, run.s_L, run.occ, run.u)

    run.drive(call)
    return run.result()


def run_replications(fn: Callable[..., SimPath], seeds: Sequence[int], threads: int = 1, **kwargs) -> list[SimPath]:
    """Run ``fn(seed=s, rep=k, **kwargs)`` for each replication k.

    Replication k always uses stream (seeds[k], k), so results do not depend
    on the thread count; they are returned in replication order.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("no replications requested")

    def one(k: int) -> SimPath:
        return fn(seed=seeds[k], rep=k, **kwargs)

    if threads <= 1:
        return [one(k) for k in range(len(seeds))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(len(seeds))))
