"""Diffusion scaling, collapse statistics and replication estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import NetworkConfig
from .sim.engine import ArrivalRecords, SimPath

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ScaledPath:
    times: np.ndarray
    qhat: np.ndarray  # (n, S)
    qhat_sigma: np.ndarray  # (n,)
    q: np.ndarray  # raw queue lengths, kept for the unscaled gap

    def sandwich_violations(self, tol: float = 1e-9) -> int:
        lo = self.qhat.min(axis=1)
        hi = self.qhat.max(axis=1)
        bad = (self.qhat_sigma < lo - tol) | (self.qhat_sigma > hi + tol)
        return int(bad.sum())


def diffusion_scale(path: SimPath | np.ndarray, config: NetworkConfig, times: np.ndarray | None = None) -> ScaledPath:
    """(Q_j - p_j*lambda*r/mu) / (p_j*sqrt(lambda*r/mu)) per station, plus the p-weighted aggregate."""
    if isinstance(path, SimPath):
        q = np.asarray(path.q, dtype=float)
        times = path.sample_times
    else:
        q = np.atleast_2d(np.asarray(path, dtype=float))
        times = np.arange(q.shape[0], dtype=float) if times is None else np.asarray(times, dtype=float)
    p = config.p
    root = math.sqrt(config.offered_load)
    qhat = (q - config.station_loads) / (p * root)
    return ScaledPath(np.asarray(times, dtype=float), qhat, qhat @ p, q)


def single_arrival_shift(config: NetworkConfig, station: int) -> float:
    """Change of the scaled value at ``station`` caused by one extra battery."""
    return 1.0 / (config.p[station] * math.sqrt(config.offered_load))


@dataclass(frozen=True)
class GapStats:
    max_gap: float
    avg_gap: float
    unscaled_avg_gap: float
    unscaled_max_gap: float


def _window_weights(times: np.ndarray, t0: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Samples inside [t0, T] and the time each one is held (piecewise constant)."""
    sel = np.flatnonzero((times >= t0 - 1e-12) & (times <= T + 1e-12))
    if sel.size == 0:
        raise ValueError(f"window [{t0}, {T}] contains no samples")
    t = times[sel]
    ends = np.append(t[1:], T)
    w = np.clip(ends - t, 0.0, None)
    if w.sum() <= 0:
        w = np.ones_like(t)
    return sel, w


def ssc_gaps(scaled: ScaledPath, window: tuple[float, float]) -> GapStats:
    """Largest and time-averaged spread of the scaled (and raw) queue lengths in a window."""
    t0, T = window
    if not T > t0:
        raise ValueError("window must satisfy t0 < T")
    sel, w = _window_weights(scaled.times, t0, T)
    qh = scaled.qhat[sel]
    spread = qh.max(axis=1) - qh.min(axis=1)
    raw = scaled.q[sel]
    raw_spread = raw.max(axis=1) - raw.min(axis=1)
    return GapStats(
        max_gap=float(spread.max()),
        avg_gap=float(np.dot(spread, w) / w.sum()),
        unscaled_avg_gap=float(np.dot(raw_spread, w) / w.sum()),
        unscaled_max_gap=float(raw_spread.max()),
    )


@dataclass(frozen=True)
class Estimate:
    value: float
    half_width: float
    n: int

    @property
    def lo(self) -> float:
        return self.value - self.half_width

    @property
    def hi(self) -> float:
        return self.value + self.half_width

    @property
    def missing(self) -> bool:
        return self.n == 0


def mean_ci(values: Iterable[float]) -> Estimate:
    """Mean with a normal-approximation 95% half-width; NaN entries are skipped."""
    v = sorted(float(x) for x in values if not math.isnan(x))
    n = len(v)
    if n == 0:
        return Estimate(math.nan, math.nan, 0)
    m = math.fsum(v) / n
    if n == 1:
        return Estimate(m, math.nan, 1)
    var = math.fsum(sorted((x - m) ** 2 for x in v)) / (n - 1)
    return Estimate(m, Z95 * math.sqrt(var / n), n)


@dataclass(frozen=True)
class ReplicationWaits:
    """Per-station counts from one replication; merging is plain concatenation."""

    rep: int
    arrivals: np.ndarray
    waited: np.ndarray
    wait_sum: np.ndarray
    completed: np.ndarray  # arrivals whose wait is known

    @property
    def wait_fraction(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.arrivals > 0, self.waited / np.maximum(self.arrivals, 1), np.nan)

    @property
    def mean_wait(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.completed > 0, self.wait_sum / np.maximum(self.completed, 1), np.nan)


def summarize_arrivals(arrivals: ArrivalRecords, n_stations: int, rep: int = 0, after: float = 0.0) -> ReplicationWaits:
    keep = arrivals.time >= after
    st = arrivals.station[keep]
    waited = arrivals.waited[keep]
    wait = arrivals.wait[keep]
    known = ~np.isnan(wait)
    counts = np.bincount(st, minlength=n_stations)
    w_counts = np.bincount(st[waited], minlength=n_stations)
    w_sum = np.bincount(st[known], weights=wait[known], minlength=n_stations)
    done = np.bincount(st[known], minlength=n_stations)
    return ReplicationWaits(rep, counts, w_counts, w_sum, done)


@dataclass(frozen=True)
class WaitStats:
    wait_prob: tuple[Estimate, ...]
    mean_wait: tuple[Estimate, ...]
    pooled_wait_prob: Estimate

    @property
    def missing(self) -> list[int]:
        return [j for j, e in enumerate(self.wait_prob) if e.missing]


def wait_stats(reps: Sequence[ReplicationWaits | SimPath], n_stations: int | None = None,
               after: float = 0.0) -> WaitStats:
    """Per-station waiting probability and mean wait across replications.

    A station with no arrivals in a replication contributes nothing for that
    replication; a station with none at all is reported as missing (NaN).
    """
    items = []
    for k, x in enumerate(reps):
        if isinstance(x, SimPath):
            items.append(summarize_arrivals(x.arrivals, x.n_stations, x.rep, after))
        else:
            items.append(x)
    if not items:
        raise ValueError("no replications")
    items.sort(key=lambda r: r.rep)
    S = items[0].arrivals.size if n_stations is None else n_stations
    fr = np.array([r.wait_fraction for r in items])
    mw = np.array([r.mean_wait for r in items])
    pooled = [float(r.waited.sum() / r.arrivals.sum()) if r.arrivals.sum() else math.nan for r in items]
    return WaitStats(
        tuple(mean_ci(fr[:, j]) for j in range(S)),
        tuple(mean_ci(mw[:, j]) for j in range(S)),
        mean_ci(pooled),
    )


def utilization(path: SimPath, config: NetworkConfig | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Time-averaged busy-charger fraction and non-full-battery fraction per station.

    Uses the exact occupancy histogram: rho_F = E[min(q,F)]/F and
    rho_B = E[min(q,B)]/B.  Unlimited chargers give rho_F = NaN.
    """
    occ = path.occupancy
    total = occ.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("path has no elapsed time")
    dist = occ / total
    levels = np.arange(occ.shape[1], dtype=float)
    B = (config.B if config is not None else path.B).astype(float)
    F = config.F if config is not None else path.F
    rho_F = np.empty(B.size)
    rho_B = np.empty(B.size)
    for j in range(B.size):
        if math.isfinite(F[j]):
            rho_F[j] = np.dot(dist[j], np.minimum(levels, F[j])) / F[j]
        else:
            rho_F[j] = math.nan
        rho_B[j] = np.dot(dist[j], np.minimum(levels, B[j])) / B[j] if B[j] > 0 else math.nan
    return rho_F, rho_B


def occupation_measure(path: SimPath, station: int = 0) -> np.ndarray:
    occ = path.occupancy[station]
    return occ / occ.sum()


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    n = max(p.size, q.size)
    a = np.zeros(n)
    b = np.zeros(n)
    a[: p.size] = p
    b[: q.size] = q
    return 0.5 * float(np.abs(a - b).sum())
