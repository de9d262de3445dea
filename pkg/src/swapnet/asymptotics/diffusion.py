"""Stationary law of the piecewise-linear OU process that describes the
diffusion-scaled number of batteries in need of charging.

The drift is m(x) = -lambda*(x - beta)^+ - mu*min(x, gamma) with constant
infinitesimal variance 2*mu (gamma = +inf when chargers never bind).  On
each interval where the drift is linear the stationary density is either a
truncated Gaussian or a truncated exponential, so every regime is stored as
three weighted pieces glued together at two breakpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from ..model import QedParams, Regime
from . import normal


@dataclass(frozen=True)
class GaussPiece:
    """N(center, scale^2) conditioned on [lo, hi)."""

    lo: float
    hi: float
    center: float
    scale: float

    def _z(self, x):
        return (np.asarray(x, dtype=float) - self.center) / self.scale

    @property
    def mass(self) -> float:
        return float(normal.interval_prob(self._z(self.lo), self._z(self.hi)))

    def pdf(self, x):
        return normal.pdf(self._z(x)) / (self.scale * self.mass)

    def cdf(self, x):
        """P(X <= x | piece) for lo <= x <= hi."""
        return normal.interval_prob(self._z(self.lo), self._z(x)) / self.mass

    def sf(self, x):
        return normal.interval_prob(self._z(x), self._z(self.hi)) / self.mass

    def mean(self) -> float:
        a, b = self._z(self.lo), self._z(self.hi)
        if self.hi == math.inf:
            return float(self.center + self.scale / normal.mills(a))
        return float(self.center + self.scale * (normal.pdf(a) - normal.pdf(b)) / self.mass)


@dataclass(frozen=True)
class ExpPiece:
    """Density proportional to exp(-rate*(x - lo)) on [lo, hi); rate may be <= 0."""

    lo: float
    hi: float
    rate: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def _norm(self) -> float:
        # rate / (1 - exp(-rate*width)), with the uniform limit at rate = 0
        w = self.width
        if self.rate == 0.0:
            return 1.0 / w
        return self.rate / -math.expm1(-self.rate * w)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return self._norm() * np.exp(-self.rate * (x - self.lo))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.rate == 0.0:
            return (x - self.lo) / self.width
        return np.expm1(-self.rate * (x - self.lo)) / math.expm1(-self.rate * self.width)

    def sf(self, x):
        return 1.0 - self.cdf(x)

    def mean(self) -> float:
        w = self.width
        if self.rate == 0.0:
            return self.lo + w / 2
        k = self.rate
        return self.lo + 1.0 / k - w / math.expm1(k * w)


def _hazard_left(x: float) -> float:
    """phi(x)/Phi(x), stable for very negative x."""
    return math.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - float(normal.log_cdf(x)))


@dataclass(frozen=True)
class DiffusionSpec:
    lam: float
    mu: float
    beta: float
    gamma: float
    regime: Regime
    alpha: tuple[float, float, float]
    breakpoints: tuple[float, float]
    pieces: tuple

    def drift(self, x):
        g = math.inf if self.regime is Regime.UNLIMITED_CHARGERS else self.gamma
        x = np.asarray(x, dtype=float)
        return -self.lam * np.maximum(x - self.beta, 0.0) - self.mu * np.minimum(x, g)

    @property
    def variance(self) -> float:
        return 2.0 * self.mu

    def density(self, x):
        return diffusion_density(x, self)

    def cdf(self, x):
        return diffusion_cdf(x, self)


def _ratios(lam: float, mu: float, beta: float, gamma: float, regime: Regime) -> tuple[float, float, float]:
    if regime is Regime.LIMITED_CHARGERS:
        if gamma > beta:
            raise ValueError("limited-chargers regime needs gamma <= beta")
        s = math.sqrt(mu / lam)
        h = _hazard_left(gamma)
        w = beta - gamma
        if gamma == 0.0:
            r2 = math.sqrt(2.0 / math.pi) * beta
        else:
            r2 = h * -math.expm1(-gamma * w) / gamma
        r3 = h * math.exp(-gamma * w) * s * float(normal.mills(s * gamma))
        return 1.0, r2, r3
    if regime is Regime.UNLIMITED_CHARGERS:
        sig = math.sqrt(mu / (lam + mu))
        r3 = sig * _hazard_left(beta) * float(normal.mills(beta * sig))
        return 1.0, 0.0, r3
    if regime is Regime.SWAP_UNCONSTRAINED:
        if not gamma > beta:
            raise ValueError("swap-unconstrained regime needs gamma > beta")
        sig2 = math.sqrt(mu / (lam + mu))
        c2 = lam * beta / (lam + mu)
        a2 = beta * sig2
        b2 = (gamma - c2) / sig2
        sig3 = math.sqrt(mu / lam)
        c3 = beta - mu * gamma / lam
        a3 = (gamma - c3) / sig3
        h = _hazard_left(beta)
        r2 = h * sig2 * float(normal.interval_prob(a2, b2)) / float(normal.pdf(a2))
        r3 = h * math.exp(-0.5 * (b2 * b2 - a2 * a2)) * sig3 * float(normal.mills(a3))
        return 1.0, r2, r3
    raise ValueError(f"unknown regime {regime!r}")


def diffusion_alpha(lam: float, mu: float, beta: float, gamma: float, regime: Regime | str) -> tuple[float, float, float]:
    """Weights of the three density pieces; they sum to one."""
    regime = Regime.parse(regime)
    r = _ratios(float(lam), float(mu), float(beta), float(gamma), regime)
    total = math.fsum(r)
    return tuple(x / total for x in r)  # type: ignore[return-value]


def diffusion_spec(lam: float, mu: float, beta: float, gamma: float = math.inf,
                   regime: Regime | str = Regime.LIMITED_CHARGERS) -> DiffusionSpec:
    regime = Regime.parse(regime)
    lam, mu, beta, gamma = float(lam), float(mu), float(beta), float(gamma)
    if not (lam > 0 and mu > 0):
        raise ValueError("lambda and mu must be positive")
    alpha = diffusion_alpha(lam, mu, beta, gamma, regime)
    tail_scale = math.sqrt(mu / lam)
    if regime is Regime.LIMITED_CHARGERS:
        bps = (gamma, beta)
        pieces = (
            GaussPiece(-math.inf, gamma, 0.0, 1.0),
            ExpPiece(gamma, beta, gamma),
            GaussPiece(beta, math.inf, beta - mu * gamma / lam, tail_scale),
        )
    elif regime is Regime.UNLIMITED_CHARGERS:
        bps = (beta, beta)
        sig = math.sqrt(mu / (lam + mu))
        pieces = (
            GaussPiece(-math.inf, beta, 0.0, 1.0),
            ExpPiece(beta, beta, 0.0),
            GaussPiece(beta, math.inf, lam * beta / (lam + mu), sig),
        )
    else:
        bps = (beta, gamma)
        sig = math.sqrt(mu / (lam + mu))
        pieces = (
            GaussPiece(-math.inf, beta, 0.0, 1.0),
            GaussPiece(beta, gamma, lam * beta / (lam + mu), sig),
            GaussPiece(gamma, math.inf, beta - mu * gamma / lam, tail_scale),
        )
    return DiffusionSpec(lam, mu, beta, gamma, regime, alpha, bps, pieces)


def spec_from_qed(lam: float, mu: float, qed: QedParams) -> DiffusionSpec:
    return diffusion_spec(lam, mu, qed.beta, qed.gamma, qed.regime)


def _piece_index(x: np.ndarray, spec: DiffusionSpec) -> np.ndarray:
    lo, hi = spec.breakpoints
    return np.where(x < lo, 0, np.where(x < hi, 1, 2))


def diffusion_density(x, spec: DiffusionSpec):
    x = np.asarray(x, dtype=float)
    idx = _piece_index(x, spec)
    out = np.zeros_like(x)
    for i, (a, piece) in enumerate(zip(spec.alpha, spec.pieces)):
        sel = idx == i
        if a > 0 and np.any(sel):
            out[sel] = a * piece.pdf(x[sel])
    return out if out.ndim else float(out)


def diffusion_cdf(x, spec: DiffusionSpec):
    x = np.asarray(x, dtype=float)
    idx = _piece_index(x, spec)
    a1, a2, a3 = spec.alpha
    p1, p2, p3 = spec.pieces
    out = np.empty_like(x)
    s0, s1, s2 = idx == 0, idx == 1, idx == 2
    out[s0] = a1 * p1.cdf(x[s0])
    if a2 > 0:
        out[s1] = a1 + a2 * p2.cdf(x[s1])
    else:
        out[s1] = a1
    out[s2] = 1.0 - a3 * p3.sf(x[s2])
    out = np.clip(out, 0.0, 1.0)
    return out if out.ndim else float(out)


def tail_mass(spec: DiffusionSpec) -> float:
    """Stationary probability that the scaled queue sits at or above beta."""
    total = 0.0
    for a, piece in zip(spec.alpha, spec.pieces):
        if a > 0 and piece.lo >= spec.beta:
            total += a
    return total


def tail_integral(spec: DiffusionSpec) -> float:
    """Integral of (x - beta) * density over x >= beta."""
    total = 0.0
    for a, piece in zip(spec.alpha, spec.pieces):
        if a > 0 and piece.lo >= spec.beta:
            total += a * (piece.mean() - spec.beta)
    return total


def wait_probability_limit(lam: float, mu: float, beta: float, gamma: float = math.inf,
                           regime: Regime | str = Regime.LIMITED_CHARGERS) -> float:
    """Limiting probability that an arriving EV finds no full battery."""
    spec = diffusion_spec(lam, mu, beta, gamma, regime)
    if spec.regime is Regime.SWAP_UNCONSTRAINED:
        return 1.0 - spec.alpha[0]
    return spec.alpha[2]


def expected_wait_limit(lam: float, mu: float, beta: float, gamma: float = math.inf,
                        regime: Regime | str = Regime.LIMITED_CHARGERS, r: int = 1) -> tuple[float, float]:
    """QED approximation of (E[waiting EVs], E[waiting time]) at population r."""
    spec = diffusion_spec(lam, mu, beta, gamma, regime)
    e_qw = math.sqrt(lam * r / mu) * tail_integral(spec)
    return e_qw, e_qw / (lam * (r - e_qw))


def scaled_wait_constant(lam: float, mu: float, beta: float, gamma: float = math.inf,
                         regime: Regime | str = Regime.LIMITED_CHARGERS) -> float:
    """lim sqrt(r) * E[W] as r grows."""
    spec = diffusion_spec(lam, mu, beta, gamma, regime)
    return tail_integral(spec) / math.sqrt(lam * mu)


@dataclass(frozen=True)
class LimitPath:
    times: np.ndarray
    x: np.ndarray
    seed: int


@numba.njit(cache=True, nogil=True)
def _euler_maruyama(x0, lam, mu, beta, gamma, dt, noise_sd, z, out):
    x = x0
    out[0] = x
    for n in range(z.size):
        excess = x - beta
        if excess < 0.0:
            excess = 0.0
        drift = -lam * excess - mu * (x if x < gamma else gamma)
        x = x + drift * dt + noise_sd * z[n]
        out[n + 1] = x


def simulate_limit_diffusion(spec: DiffusionSpec, q0_hat: float, horizon: float, step: float,
                             seed: int, noise: bool = True) -> LimitPath:
    """Euler-Maruyama sample path on the grid 0, step, 2*step, ..."""
    if not step > 0:
        raise ValueError("step must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n = int(math.ceil(horizon / step - 1e-12))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    z = rng.standard_normal(n)
    gamma = math.inf if spec.regime is Regime.UNLIMITED_CHARGERS else spec.gamma
    sd = math.sqrt(spec.variance * step) if noise else 0.0
    out = np.empty(n + 1)
    _euler_maruyama(float(q0_hat), spec.lam, spec.mu, spec.beta, gamma, step, sd, z, out)
    return LimitPath(np.arange(n + 1) * step, out, seed)


__all__ = [
    "DiffusionSpec",
    "ExpPiece",
    "GaussPiece",
    "LimitPath",
    "diffusion_alpha",
    "diffusion_cdf",
    "diffusion_density",
    "diffusion_spec",
    "expected_wait_limit",
    "scaled_wait_constant",
    "simulate_limit_diffusion",
    "spec_from_qed",
    "tail_integral",
    "tail_mass",
    "wait_probability_limit",
]
