import math
import time
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import null_space

from swapnet.exactss import (
    arrival_wait_probability,
    expected_waiting,
    steady_state,
    steady_state_infinite_F,
    wait_probability_exact,
)


def generator_oracle(B, F, r, lam, mu):
    """Stationary law from the null space of the dense generator."""
    n = B + r + 1
    Q = np.zeros((n, n))
    for k in range(n):
        up = lam * (r - max(k - B, 0))
        down = mu * min(k, F)
        if k + 1 < n:
            Q[k, k + 1] = up
        if k > 0:
            Q[k, k - 1] = down
        Q[k, k] = -Q[k].sum()
    v = null_space(Q.T)[:, 0]
    return v / v.sum()


def product_form_oracle(B, F, r, lam, mu):
    """Exact rational stationary law via detailed balance."""
    lam, mu = Fraction(lam), Fraction(mu)
    w = [Fraction(1)]
    for k in range(1, B + r + 1):
        w.append(w[-1] * lam * (r - max(k - 1 - B, 0)) / (mu * min(k, F)))
    total = sum(w)
    return [x / total for x in w]


def test_matches_dense_generator():
    t0 = time.perf_counter()
    dist = steady_state(5, 3, 10, 1.0, 2.0)
    elapsed = time.perf_counter() - t0
    np.testing.assert_allclose(dist.pi, generator_oracle(5, 3, 10, 1.0, 2.0), rtol=0, atol=1e-10)
    assert elapsed < 1.0


@pytest.mark.parametrize("B,F,r,lam,mu", [(5, 3, 10, 1, 2), (0, 1, 7, 3, 1), (4, 4, 12, 1, 1), (2, 6, 9, 2, 3)])
def test_matches_rational_product_form(B, F, r, lam, mu):
    exact = product_form_oracle(B, F, r, lam, mu)
    dist = steady_state(B, F, r, lam, mu)
    np.testing.assert_allclose(dist.pi, [float(x) for x in exact], rtol=1e-12, atol=1e-300)


def test_large_population_is_finite_and_normalised():
    dist = steady_state(100_317, 100_159, 100_000, 1.0, 1.0)
    assert np.all(np.isfinite(dist.log_pi))
    assert math.isclose(dist.pi.sum(), 1.0, rel_tol=1e-12)


def test_infinite_chargers_equal_chargers_that_never_bind():
    a = steady_state_infinite_F(6, 20, 1.0, 1.5)
    b = steady_state(6, 26, 20, 1.0, 1.5)
    np.testing.assert_allclose(a.pi, b.pi, rtol=1e-13)


def test_wait_probabilities_against_rational_oracle():
    B, F, r, lam, mu = 5, 3, 10, 1, 2
    pi = product_form_oracle(B, F, r, lam, mu)
    stationary = sum(pi[B:])
    demand = [Fraction(r - max(k - B, 0)) for k in range(len(pi))]
    arriving = sum(p * d for p, d in zip(pi[B:], demand[B:])) / sum(p * d for p, d in zip(pi, demand))
    dist = steady_state(B, F, r, lam, mu)
    assert wait_probability_exact(dist) == pytest.approx(float(stationary), abs=1e-13)
    assert arrival_wait_probability(dist) == pytest.approx(float(arriving), abs=1e-13)
    # closed network: arrivals do not see time averages at small r
    assert float(stationary) - float(arriving) > 0.03


def test_expected_waiting_by_littles_law():
    B, F, r, lam, mu = 5, 3, 10, 1, 2
    pi = product_form_oracle(B, F, r, lam, mu)
    eqw = sum(p * max(k - B, 0) for k, p in enumerate(pi))
    ew = eqw / (lam * (r - eqw))
    got_qw, got_w = expected_waiting(steady_state(B, F, r, lam, mu))
    assert got_qw == pytest.approx(float(eqw), rel=1e-12)
    assert got_w == pytest.approx(float(ew), rel=1e-12)


def test_distribution_helpers():
    dist = steady_state(5, 3, 10, 1.0, 2.0)
    assert dist.cdf()[-1] == pytest.approx(1.0)
    assert dist.tail_probability(0) == 1.0
    assert dist.tail_probability(10**6) == 0.0
    q = dist.quantile(0.5)
    assert dist.cdf()[q] >= 0.5 and (q == 0 or dist.cdf()[q - 1] < 0.5)
    assert dist.mean() == pytest.approx(float(np.dot(np.arange(16), generator_oracle(5, 3, 10, 1.0, 2.0))))


@pytest.mark.parametrize("args", [(-1, 3, 10, 1, 1), (5, 0, 10, 1, 1), (5, 3, 0, 1, 1), (5, 3, 10, 0, 1),
                                  (5, math.inf, 10, 1, 1), (5.5, 3, 10, 1, 1)])
def test_rejects_bad_arguments(args):
    with pytest.raises(ValueError):
        steady_state(*args)


def test_wait_probability_rejects_out_of_range_threshold():
    with pytest.raises(ValueError):
        wait_probability_exact(steady_state(2, 2, 3, 1, 1), B=99)


@settings(max_examples=60, deadline=None)
@given(B=st.integers(0, 30), F=st.integers(1, 30), r=st.integers(1, 40),
       lam=st.floats(0.05, 20), mu=st.floats(0.05, 20))
def test_detailed_balance_holds(B, F, r, lam, mu):
    dist = steady_state(B, F, r, lam, mu)
    pi = dist.pi
    k = np.arange(pi.size - 1)
    up = lam * (r - np.maximum(k - B, 0)) * pi[:-1]
    down = mu * np.minimum(k + 1, F) * pi[1:]
    np.testing.assert_allclose(up, down, rtol=1e-9, atol=1e-300)
    assert math.isclose(pi.sum(), 1.0, rel_tol=1e-12)
