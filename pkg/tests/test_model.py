import json
import math
from fractions import Fraction

import numpy as np
import pytest

from swapnet.harness import preset_five_station
from swapnet.model import (
    ConfigError,
    Edge,
    QedParams,
    Regime,
    StationCapacity,
    build_network,
    config_from_mapping,
    effective_probs,
    load_config,
    provision,
    single_station,
    NetworkConfig,
)

FIVE = [(0, 1, 0.1), (1, 3, 0.1), (2, 3, 0.1), (2, 4, 0.1), (1, 2, 0.4), (3, 4, 0.2)]


def _ceil_oracle(p, lam, mu, r, coef):
    """Provisioning level computed with Fractions plus a high-precision root."""
    import mpmath

    mpmath.mp.dps = 50
    load = Fraction(str(lam)) * r / Fraction(str(mu))
    val = mpmath.mpf(Fraction(str(p)).numerator) / Fraction(str(p)).denominator * (
        mpmath.mpf(load.numerator) / load.denominator + coef * mpmath.sqrt(mpmath.mpf(load.numerator) / load.denominator)
    )
    return int(mpmath.ceil(val))


class TestEffectiveProbs:
    def test_five_station_values(self):
        p = effective_probs([Edge(*e) for e in FIVE])
        np.testing.assert_allclose(p, [0.05, 0.3, 0.3, 0.2, 0.15], rtol=0, atol=1e-15)

    def test_sum_is_one(self):
        assert math.isclose(effective_probs([Edge(*e) for e in FIVE]).sum(), 1.0, abs_tol=1e-12)

    def test_self_loop_counts_fully(self):
        assert effective_probs([Edge(0, 0, 1.0)])[0] == 1.0

    def test_edge_is_unordered(self):
        e = Edge(3, 1, 0.5)
        assert (e.i, e.j) == (1, 3)

    @pytest.mark.parametrize("edges,msg", [
        ([(0, 1, 0.5), (2, 3, 0.5)], "disconnected"),
        ([(0, 1, 0.5), (1, 2, 0.4)], "sum to"),
        ([(0, 1, 0.5), (0, 1, 0.5)], "twice"),
    ])
    def test_rejects_bad_graphs(self, edges, msg):
        with pytest.raises(ConfigError, match=msg):
            effective_probs([Edge(*e) for e in edges])

    def test_rejects_nonpositive_probability(self):
        with pytest.raises(ConfigError):
            Edge(0, 1, 0.0)


class TestProvisioning:
    def test_five_station_loads(self):
        net = preset_five_station().network()
        np.testing.assert_allclose(net.station_loads, [62.5, 375, 375, 250, 187.5], rtol=0, atol=1e-12)

    @pytest.mark.parametrize("beta,gamma", [(1.0, 0.0), (1.0, 0.5), (2.0, -0.5), (0.3, 0.3)])
    def test_matches_high_precision_ceiling(self, beta, gamma):
        net = build_network(FIVE, 0.025, 1.0, 50_000, QedParams(beta, gamma))
        p = [0.05, 0.3, 0.3, 0.2, 0.15]
        assert list(net.B) == [_ceil_oracle(x, 0.025, 1.0, 50_000, beta) for x in p]
        assert list(net.F.astype(int)) == [_ceil_oracle(x, 0.025, 1.0, 50_000, gamma) for x in p]

    def test_integral_load_is_not_bumped(self):
        # 0.1 * 30 is 3.0000000000000004 in binary floating point
        (cap,) = provision(0.1, 1.0, 30, QedParams(0.0, 0.0), [1.0], G=1)
        assert cap.B == 3 and cap.F == 3

    def test_unlimited_regime_has_infinite_chargers(self):
        net = build_network(FIVE, 0.025, 1.0, 50_000, QedParams(1.0, 0.0, "unlimited"))
        assert np.all(np.isinf(net.F))

    def test_swap_unconstrained_allows_more_chargers_than_batteries(self):
        (cap,) = provision(1.0, 1.0, 10_000, QedParams(0.5, 1.0, Regime.SWAP_UNCONSTRAINED), [1.0])
        assert cap.G == math.inf and cap.F > cap.B

    def test_rounding_that_overshoots_swap_servers_is_rejected(self):
        # gamma = beta, but F and B round to the same value so F <= B + G holds;
        # push F above B+G with a swap-unconstrained-style gamma under G=1
        with pytest.raises(ConfigError):
            QedParams(0.0, 1.0)  # limited regime forbids gamma > beta
        with pytest.raises(ConfigError, match="exceeds B\\+G"):
            NetworkConfig(1, (Edge(0, 0, 1.0),), 1.0, 1.0, 10, (StationCapacity(2, 4, 1),))

    def test_negative_spares_rejected(self):
        with pytest.raises(ConfigError, match="negative"):
            provision(1.0, 1.0, 4, QedParams(-5.0, -5.0), [1.0])

    def test_no_chargers_rejected(self):
        with pytest.raises(ConfigError, match="no chargers"):
            provision(1.0, 1.0, 4, QedParams(-1.0, -3.0), [1.0])


class TestConfig:
    def _mapping(self, **kw):
        d = {
            "lambda": 0.025, "mu": 1.0, "r": 50000, "stations": 5, "beta": 1.0, "gamma": 0.0,
            "edges": [{"i": i + 1, "j": j + 1, "p": p} for i, j, p in FIVE],
        }
        d.update(kw)
        return d

    def test_round_trip_through_file(self, tmp_path):
        path = tmp_path / "net.json"
        path.write_text(json.dumps(self._mapping()))
        net, qed = load_config(path)
        assert net == preset_five_station().network()
        assert qed.beta == 1.0 and qed.regime is Regime.LIMITED_CHARGERS
        assert net.to_dict()["edges"][0] == {"i": 1, "j": 2, "p": 0.1}

    def test_schema_error_names_location(self):
        bad = self._mapping()
        bad["edges"][2]["p"] = -0.1
        with pytest.raises(ConfigError, match="edges/2/p"):
            config_from_mapping(bad)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_mapping(self._mapping(colour="blue"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_regime_aliases(self):
        assert Regime.parse("Unlimited-Chargers") is Regime.UNLIMITED_CHARGERS
        assert Regime.parse("main") is Regime.LIMITED_CHARGERS
        with pytest.raises(ConfigError):
            Regime.parse("turbo")


class TestNetworkConfig:
    def test_route_weights_are_proportional_integers(self):
        net = preset_five_station().network()
        assert list(net.route_weights) == [1, 6, 6, 4, 3]

    def test_single_station(self):
        net = single_station(1.0, 2.0, 10, 5, 3)
        assert net.n_stations == 1 and net.B[0] == 5 and net.F[0] == 3
        assert net.station_loads[0] == 5.0

    def test_finite_F_caps_infinity(self):
        net = single_station(1.0, 1.0, 10, 4, math.inf)
        assert net.finite_F()[0] == 14
