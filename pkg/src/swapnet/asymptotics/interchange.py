"""Distance between the scaled exact steady state and its diffusion limit."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..exactss import steady_state
from ..model import QedParams, Regime, provision
from .diffusion import diffusion_cdf, diffusion_spec


@dataclass(frozen=True)
class InterchangePoint:
    r: int
    B: int
    F: int
    distance: float


def kolmogorov_distance(atoms: np.ndarray, probs: np.ndarray, limit_cdf) -> float:
    """sup_x |F_atoms(x) - G(x)| for a discrete law against a continuous CDF.

    The supremum is attained at an atom, approached from the left or the right.
    """
    right = np.minimum(np.cumsum(probs), 1.0)
    left = np.concatenate(([0.0], right[:-1]))
    g = limit_cdf(atoms)
    return float(max(np.max(np.abs(right - g)), np.max(np.abs(left - g))))


def interchange_check(lam: float, mu: float, beta: float, gamma: float,
                      r_grid: Iterable[int]) -> list[InterchangePoint]:
    r_list = [int(r) for r in r_grid]
    if not r_list:
        raise ValueError("r_grid is empty")
    if any(b <= a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_grid must be strictly increasing")
    qed = QedParams(beta, gamma, Regime.LIMITED_CHARGERS)
    spec = diffusion_spec(lam, mu, beta, gamma, Regime.LIMITED_CHARGERS)
    out = []
    for r in r_list:
        (cap,) = provision(lam, mu, r, qed, [1.0], G=math.inf)
        dist = steady_state(cap.B, int(cap.F), r, lam, mu)
        load = lam * r / mu
        x = (dist.states - load) / math.sqrt(load)
        d = kolmogorov_distance(x, dist.pi, lambda z: diffusion_cdf(z, spec))
        out.append(InterchangePoint(r, cap.B, int(cap.F), d))
    return out
