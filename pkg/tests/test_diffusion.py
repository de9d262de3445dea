import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from swapnet.asymptotics import (
    diffusion_alpha,
    diffusion_cdf,
    diffusion_density,
    diffusion_spec,
    expected_wait_limit,
    scaled_wait_constant,
    simulate_limit_diffusion,
    tail_integral,
    wait_probability_limit,
)
from swapnet.asymptotics import normal
from swapnet.exactss import arrival_wait_probability, expected_waiting, steady_state
from swapnet.model import QedParams, Regime, provision

mp.mp.dps = 40
phi = mp.npdf


def Phi(x):
    return mp.ncdf(x)


# ------------------------------------------------------------ closed-form oracles

def oracle_limited(lam, mu, beta, gamma):
    lam, mu, beta, gamma = map(mp.mpf, (lam, mu, beta, gamma))
    s = mp.sqrt(mu / lam)
    r1 = mp.mpf(1)
    if gamma == 0:
        r2 = mp.sqrt(2 / mp.pi) * beta
    else:
        r2 = phi(gamma) / Phi(gamma) / gamma * (1 - mp.e ** (-gamma * (beta - gamma)))
    r3 = phi(gamma) / Phi(gamma) * mp.e ** (-gamma * (beta - gamma)) * s / phi(s * gamma) * Phi(-s * gamma)
    tot = r1 + r2 + r3
    a = (r1 / tot, r2 / tot, r3 / tot)
    tail = a[2] * (s * phi(s * gamma) / Phi(-s * gamma) - mu / lam * gamma)
    return a, a[2], tail


def oracle_unlimited(lam, mu, beta):
    lam, mu, beta = map(mp.mpf, (lam, mu, beta))
    s = mp.sqrt(mu / (lam + mu))
    alpha = 1 / (1 + mp.sqrt((lam + mu) / mu) * mp.e ** (beta**2 / 2 * lam / (lam + mu)) * Phi(beta) / Phi(-beta * s))
    c = -mu * beta / (lam + mu)
    tail = alpha * (c + s * phi(c / s) / Phi(c / s))
    return (1 - alpha, mp.mpf(0), alpha), alpha, tail


def oracle_swap_unconstrained(lam, mu, beta, gamma):
    lam, mu, beta, gamma = map(mp.mpf, (lam, mu, beta, gamma))
    s2 = mp.sqrt(mu / (lam + mu))
    s3 = mp.sqrt(mu / lam)
    zg = (gamma - lam / (lam + mu) * beta) / s2
    zb = s2 * beta
    w = (gamma - (beta - mu / lam * gamma)) / s3
    r1 = mp.mpf(1)
    r2 = phi(beta) / Phi(beta) * s2 / phi(zb) * (Phi(zg) - Phi(zb))
    r3 = phi(beta) / Phi(beta) * phi(zg) / phi(zb) * s3 / phi(w) * Phi(-w)
    tot = r1 + r2 + r3
    a = (r1 / tot, r2 / tot, r3 / tot)
    # mean excess over beta: the middle piece is a normal truncated to [beta, gamma)
    middle = s2 * (phi(zb) - phi(zg)) / (Phi(zg) - Phi(zb)) - mu / (lam + mu) * beta
    upper = s3 * phi(w) / Phi(-w) - mu / lam * gamma
    return a, 1 - a[0], a[1] * middle + a[2] * upper


def _random_sets(regime, n=20, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        lam, mu = rng.uniform(0.05, 5.0, size=2)
        beta = rng.uniform(-1.5, 3.0)
        if regime is Regime.LIMITED_CHARGERS:
            gamma = beta - rng.uniform(0.0, 3.0)
        elif regime is Regime.SWAP_UNCONSTRAINED:
            gamma = beta + rng.uniform(0.05, 3.0)
        else:
            gamma = math.inf
        out.append((float(lam), float(mu), float(beta), float(gamma)))
    return out


ALL_SETS = [(reg, ps) for reg in Regime for ps in _random_sets(reg)]
IDS = [f"{reg.value}-{k}" for reg in Regime for k in range(20)]


def _oracle(regime, lam, mu, beta, gamma):
    if regime is Regime.LIMITED_CHARGERS:
        return oracle_limited(lam, mu, beta, gamma)
    if regime is Regime.UNLIMITED_CHARGERS:
        return oracle_unlimited(lam, mu, beta)
    return oracle_swap_unconstrained(lam, mu, beta, gamma)


def _quad(f, spec, lo=-math.inf):
    """Integrate piece by piece so quad never straddles a kink."""
    edges = sorted({lo, *[b for b in spec.breakpoints if b > lo], math.inf})
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        if b > a:
            total += integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    return total


# ------------------------------------------------------------------- the tests

@pytest.mark.parametrize("regime,params", ALL_SETS, ids=IDS)
def test_alpha_matches_closed_form(regime, params):
    a, _, _ = _oracle(regime, *params)
    got = diffusion_alpha(*params, regime)
    np.testing.assert_allclose(got, [float(x) for x in a], rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("regime,params", ALL_SETS, ids=IDS)
def test_density_integrates_to_one_and_is_continuous(regime, params):
    spec = diffusion_spec(*params, regime)
    total = _quad(lambda x: diffusion_density(x, spec), spec)
    assert abs(total - 1.0) <= 1e-8
    for b in set(spec.breakpoints):
        left = diffusion_density(np.nextafter(b, -math.inf), spec)
        right = diffusion_density(b, spec)
        assert abs(left - right) <= 1e-9 * max(abs(left), abs(right), 1e-300)


@pytest.mark.parametrize("regime,params", ALL_SETS, ids=IDS)
def test_limits_match_quadrature_and_closed_form(regime, params):
    spec = diffusion_spec(*params, regime)
    beta = params[2]
    p_quad = _quad(lambda x: diffusion_density(x, spec), spec, lo=beta)
    w_quad = _quad(lambda x: (x - beta) * diffusion_density(x, spec), spec, lo=beta)
    p = wait_probability_limit(*params, regime)
    assert abs(p - p_quad) <= 1e-10
    assert abs(tail_integral(spec) - w_quad) <= 1e-8
    _, p_exact, tail_exact = _oracle(regime, *params)
    assert p == pytest.approx(float(p_exact), rel=1e-10, abs=1e-14)
    assert tail_integral(spec) == pytest.approx(float(tail_exact), rel=1e-9, abs=1e-13)


@pytest.mark.parametrize("regime,params", ALL_SETS[::7], ids=IDS[::7])
def test_cdf_is_integral_of_density(regime, params):
    spec = diffusion_spec(*params, regime)
    for x in (-1.0, 0.3, params[2], params[2] + 0.7, 4.0):
        q = _quad(lambda t: diffusion_density(t, spec), spec) - _quad(lambda t: diffusion_density(t, spec), spec, lo=x)
        assert diffusion_cdf(x, spec) == pytest.approx(q, abs=1e-9)


def test_alpha_sums_to_one():
    for regime, params in ALL_SETS:
        assert math.isclose(sum(diffusion_alpha(*params, regime)), 1.0, rel_tol=1e-14)


def test_unit_rates_reference_value():
    # lambda = mu = beta = 1, gamma = 0.5
    a, p, _ = oracle_limited(1, 1, 1, 0.5)
    assert wait_probability_limit(1, 1, 1, 0.5) == pytest.approx(float(p), rel=1e-12)


def test_gamma_zero_is_limit_of_positive_gamma():
    a0 = diffusion_alpha(0.4, 1.3, 1.2, 0.0, "limited")
    a1 = diffusion_alpha(0.4, 1.3, 1.2, 1e-7, "limited")
    np.testing.assert_allclose(a0, a1, rtol=1e-6)


def test_appendix_style_product_in_r2_would_be_wrong():
    # the middle weight uses phi/Phi; a product phi*Phi breaks continuity at gamma
    lam, mu, beta, gamma = 1.0, 1.0, 1.0, 0.5
    spec = diffusion_spec(lam, mu, beta, gamma)
    r2_product = float(phi(gamma) * Phi(gamma) / gamma * (1 - mp.e ** (-gamma * (beta - gamma))))
    r2 = spec.alpha[1] / spec.alpha[0]
    assert abs(r2 - r2_product) > 0.05


def test_rejects_regime_inconsistent_gamma():
    with pytest.raises(ValueError):
        diffusion_spec(1, 1, 1.0, 2.0, "limited")
    with pytest.raises(ValueError):
        diffusion_spec(1, 1, 1.0, 0.5, "swap_unconstrained")


def test_expected_wait_uses_littles_law():
    e_qw, e_w = expected_wait_limit(1, 1, 1, 0.5, "limited", r=10_000)
    spec = diffusion_spec(1, 1, 1, 0.5)
    assert e_qw == pytest.approx(math.sqrt(10_000) * tail_integral(spec))
    assert e_w == pytest.approx(e_qw / (10_000 - e_qw))
    assert scaled_wait_constant(1, 1, 1, 0.5) == pytest.approx(tail_integral(spec))


@pytest.mark.parametrize("regime,beta,gamma", [("limited", 1.0, 0.5), ("unlimited", 0.5, math.inf),
                                               ("swap_unconstrained", 0.2, 1.0)])
def test_exact_chain_approaches_limits(regime, beta, gamma):
    lam, mu, r = 1.0, 1.0, 100_000
    (cap,) = provision(lam, mu, r, QedParams(beta, 0.0 if regime == "unlimited" else gamma, regime), [1.0])
    F = int(cap.B + r) if math.isinf(cap.F) else int(cap.F)
    dist = steady_state(cap.B, F, r, lam, mu)
    limit = wait_probability_limit(lam, mu, beta, gamma, regime)
    assert abs(arrival_wait_probability(dist) - limit) < 0.01
    e_qw, _ = expected_waiting(dist)
    assert e_qw / math.sqrt(r) == pytest.approx(scaled_wait_constant(lam, mu, beta, gamma, regime), rel=0.05)


def test_normal_helpers():
    x = np.array([-20.0, -3.0, 0.0, 2.0, 30.0])
    np.testing.assert_allclose(normal.mills(x) * normal.pdf(x), normal.cdf(-x), rtol=1e-12, atol=1e-300)
    assert normal.interval_prob(30.0, 31.0) > 0
    assert normal.interval_prob(-1.0, 1.0) == pytest.approx(0.6826894921370859)


def test_limit_diffusion_simulation_matches_stationary_mean():
    spec = diffusion_spec(1.0, 1.0, 1.0, 0.5)
    path = simulate_limit_diffusion(spec, 0.0, horizon=4000.0, step=0.01, seed=7)
    xs = np.linspace(-8, 12, 40001)
    mean = np.trapezoid(xs * diffusion_density(xs, spec), xs)
    assert np.mean(path.x[len(path.x) // 10:]) == pytest.approx(mean, abs=0.1)


def test_limit_diffusion_without_noise_follows_drift():
    spec = diffusion_spec(1.0, 2.0, 1.0, 0.5)
    path = simulate_limit_diffusion(spec, 3.0, horizon=20.0, step=0.001, seed=0, noise=False)
    # deterministic flow settles where the drift vanishes: x = 0 under mu*min(x, gamma)
    assert abs(path.x[-1]) < 1e-6


def test_limit_diffusion_histogram_matches_density():
    # Euler-Maruyama, step 0.01, last 10^6 steps after a 1000 time-unit burn-in
    spec = diffusion_spec(1.0, 1.0, 1.0, 0.5)
    path = simulate_limit_diffusion(spec, 0.0, horizon=11_000.0, step=0.01, seed=0)
    sample = np.sort(path.x[-1_000_000:])
    ecdf = np.arange(1, sample.size + 1) / sample.size
    ks = np.max(np.abs(ecdf - diffusion_cdf(sample, spec)))
    assert ks <= 0.02
