"""Standard normal helpers that stay accurate far in the tails."""
from __future__ import annotations

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr

SQRT_2PI = np.sqrt(2.0 * np.pi)
_SQRT_HALF_PI = np.sqrt(np.pi / 2.0)


def pdf(x):
    return np.exp(-0.5 * np.square(x)) / SQRT_2PI


def cdf(x):
    return ndtr(x)


def log_cdf(x):
    return log_ndtr(x)


def mills(x):
    """Upper-tail ratio Phi(-x)/phi(x), evaluated without cancellation."""
    return _SQRT_HALF_PI * erfcx(np.asarray(x, dtype=float) / np.sqrt(2.0))


def interval_prob(a, b):
    """Phi(b) - Phi(a) for a <= b, using whichever tail keeps precision."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper = ndtr(-a) - ndtr(-b)
    lower = ndtr(b) - ndtr(a)
    return np.where(a > 0, upper, lower)
