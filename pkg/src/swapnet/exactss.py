"""Stationary law of the single-station birth-death chain.

The chain counts batteries in need of charging, k = 0..B+r.  Swap demand
arrives at rate lambda*(r - (k-B)^+) because EVs that are waiting for a
battery do not generate demand; charging completes at rate mu*min(k, F).

Probabilities are built from log birth/death ratios anchored at the mode and
normalised with log-sum-exp, so nothing overflows at r in the hundreds of
thousands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


@dataclass(frozen=True)
class SteadyStateDist:
    log_pi: np.ndarray
    B: int
    F: float
    r: int
    lam: float
    mu: float

    def __post_init__(self) -> None:
        self.log_pi.setflags(write=False)

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    @property
    def states(self) -> np.ndarray:
        return np.arange(self.log_pi.size)

    def cdf(self) -> np.ndarray:
        return np.minimum(np.cumsum(self.pi), 1.0)

    def mean(self) -> float:
        return float(np.dot(self.states, self.pi))

    def quantile(self, q: float) -> int:
        return int(np.searchsorted(self.cdf(), q, side="left"))

    def tail_probability(self, k: int) -> float:
        """P(Q >= k)."""
        if k <= 0:
            return 1.0
        if k >= self.log_pi.size:
            return 0.0
        return float(min(1.0, math.exp(logsumexp(self.log_pi[k:]))))


def birth_rates(B: int, r: int, lam: float, n_states: int) -> np.ndarray:
    k = np.arange(n_states, dtype=float)
    return lam * (r - np.maximum(k - B, 0.0))


def death_rates(F: float, mu: float, n_states: int) -> np.ndarray:
    k = np.arange(n_states, dtype=float)
    return mu * np.minimum(k, F)


def _check(B: int, r: int, lam: float, mu: float) -> None:
    if int(B) != B or B < 0:
        raise ValueError(f"B must be a nonnegative integer, got {B}")
    if int(r) != r or r < 1:
        raise ValueError(f"r must be a positive integer, got {r}")
    if not (lam > 0 and mu > 0):
        raise ValueError("lambda and mu must be positive")


def _solve(B: int, F: float, r: int, lam: float, mu: float) -> SteadyStateDist:
    n = int(B) + int(r) + 1
    up = birth_rates(B, r, lam, n)[:-1]
    down = death_rates(F, mu, n)[1:]
    step = np.log(up) - np.log(down)  # log pi[k+1] - log pi[k]
    # anchor at the mode so partial sums stay small where the mass is
    rough = np.concatenate(([0.0], np.cumsum(step)))
    m = int(np.argmax(rough))
    log_pi = np.empty(n)
    log_pi[m] = 0.0
    log_pi[m + 1 :] = np.cumsum(step[m:])
    if m > 0:
        log_pi[:m] = -np.cumsum(step[:m][::-1])[::-1]
    total = logsumexp(log_pi)
    assert np.isfinite(total), "normalisation failed"
    return SteadyStateDist(log_pi - total, int(B), F, int(r), float(lam), float(mu))


def steady_state(B: int, F: int, r: int, lam: float, mu: float) -> SteadyStateDist:
    """Stationary distribution with finitely many chargers."""
    _check(B, r, lam, mu)
    if F == math.inf or int(F) != F or F < 1:
        raise ValueError(f"F must be a finite integer >= 1, got {F}")
    return _solve(B, int(F), r, lam, mu)


def steady_state_infinite_F(B: int, r: int, lam: float, mu: float) -> SteadyStateDist:
    """Stationary distribution when every battery charges immediately."""
    _check(B, r, lam, mu)
    return _solve(B, math.inf, r, lam, mu)


def wait_probability_exact(dist: SteadyStateDist, B: int | None = None) -> float:
    """Time-stationary P(Q >= B): no full battery on the shelf.

    Arrivals only see this distribution asymptotically, since the demand
    rate depends on the number of waiting EVs.  See
    ``arrival_wait_probability`` for the exact fraction of arrivals that wait.
    """
    B = dist.B if B is None else B
    if int(B) != B or not (0 <= B < dist.log_pi.size):
        raise ValueError(f"B={B} outside 0..{dist.log_pi.size - 1}")
    return dist.tail_probability(int(B))


def arrival_wait_probability(dist: SteadyStateDist) -> float:
    """Fraction of arrivals that find no full battery (arrival-weighted)."""
    n = dist.log_pi.size
    with np.errstate(divide="ignore"):
        w = dist.log_pi + np.log(birth_rates(dist.B, dist.r, dist.lam, n) / dist.lam)
    w[-1] = -np.inf  # top state has zero demand
    return float(math.exp(logsumexp(w[dist.B :]) - logsumexp(w)))


def expected_waiting(dist: SteadyStateDist, B: int | None = None, lam: float | None = None,
                     r: int | None = None) -> tuple[float, float]:
    """Mean number of waiting EVs and, via Little's law, mean waiting time."""
    B = dist.B if B is None else B
    lam = dist.lam if lam is None else lam
    r = dist.r if r is None else r
    excess = np.maximum(dist.states - B, 0)
    e_qw = float(np.dot(excess, dist.pi))
    assert e_qw < r, "mean waiting count reached the population"
    return e_qw, e_qw / (lam * (r - e_qw))
