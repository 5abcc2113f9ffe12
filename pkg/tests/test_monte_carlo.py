"""Sample-average engine: determinism, statistical scaling, baseline scheme
construction and agreement with quadrature in a reducible special case."""

import math

import numpy as np
import pytest
from scipy import integrate, special

from rsma_fbl import bounds, channel_model as cm, monte_carlo as mc, optimizer as opt
from rsma_fbl import special_functions as sf
from rsma_fbl.exceptions import BudgetExceededError, ConfigError


@pytest.fixture(scope="module")
def scenario():
    config = cm.default_config()
    return config, cm.derive_link(config)


@pytest.fixture
def alloc():
    return opt.PowerAllocation(0.5, np.full(4, 0.25), np.zeros(4))


class TestSchemeSpec:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            mc.SchemeSpec("tdma")

    def test_params_validated(self):
        with pytest.raises(ConfigError):
            mc.SchemeSpec("sdma_exhaustive", {"grid_granularity": 0.0})


class TestSaaRates:
    def test_deterministic(self, scenario, alloc):
        config, derived = scenario
        a = mc.saa_rates(alloc, config, derived, 400, seed=3)
        b = mc.saa_rates(alloc, config, derived, 400, seed=3)
        assert a.r_common == b.r_common
        np.testing.assert_array_equal(a.r_private, b.r_private)

    def test_seed_matters(self, scenario, alloc):
        config, derived = scenario
        a = mc.saa_rates(alloc, config, derived, 400, seed=3)
        b = mc.saa_rates(alloc, config, derived, 400, seed=4)
        assert a.sum_rate != b.sum_rate

    def test_sum_consistency(self, scenario, alloc):
        config, derived = scenario
        est = mc.saa_rates(alloc, config, derived, 300, seed=1)
        assert est.sum_rate == pytest.approx(
            est.r_common + est.r_private.sum(), rel=1e-12)
        assert est.std_error.shape == (5,)

    def test_std_error_scaling(self, scenario, alloc):
        config, derived = scenario
        small = mc.saa_rates(alloc, config, derived, 2000, seed=5)
        big = mc.saa_rates(alloc, config, derived, 8000, seed=5)
        ratio = big.sum_std_error / small.sum_std_error
        assert 0.35 < ratio < 0.7  # expect about 1/2 from 4x the trials

    def test_degenerate_allocations(self, scenario):
        config, derived = scenario
        sdma = mc.saa_rates(opt.PowerAllocation(1.0, np.full(4, 0.25), np.zeros(4)),
                            config, derived, 200, seed=2)
        assert sdma.r_common == 0.0
        common_only = mc.saa_rates(
            opt.PowerAllocation(0.0, np.full(4, 0.25), np.zeros(4)),
            config, derived, 200, seed=2)
        np.testing.assert_allclose(common_only.r_private, 0.0)
        assert common_only.r_common > 0.0

    def test_min_rate_uses_common_split(self, scenario):
        config, derived = scenario
        c = np.array([0.4, 0.0, 0.0, 0.0])
        est = mc.saa_rates(opt.PowerAllocation(0.5, np.full(4, 0.25), c),
                           config, derived, 200, seed=2)
        assert est.min_rate == pytest.approx(float(np.min(c + est.r_private)), rel=1e-12)

    def test_single_user_matches_quadrature(self):
        # one static user: the private SINR is P*zeta*||h||^2 with
        # ||h||^2 ~ Gamma(Nt, 1), so the ergodic FBL rate is a 1-D integral
        base = cm.default_config(num_users=1, num_tx_antennas=2,
                                 blocklength_private=[300],
                                 bler_common=[1e-6], bler_private=[1e-6],
                                 velocities_kmh=[0.0], distances_m=[1.0])
        config = base.replace(distances_m=[cm.distance_for_gain(10.0, base)])
        derived = cm.derive_link(config)
        est = mc.saa_rates(opt.PowerAllocation(1.0, np.array([1.0]), np.zeros(1)),
                           config, derived, 40_000, seed=9)
        snr = derived.tx_power_mW * derived.zeta[0]
        qinv = sf.gauss_q_inv(1e-6)

        def integrand(g):
            gamma = snr * g
            rate = max(0.0, math.log2(1 + gamma)
                       - math.sqrt(sf.channel_dispersion(gamma) / 300) * qinv)
            return rate * g * math.exp(-g)  # Gamma(2,1) density

        oracle, _ = integrate.quad(integrand, 0, np.inf, limit=400)
        assert est.r_private[0] == pytest.approx(oracle, rel=0.01)


class TestBatchCache:
    def test_batch_reused_across_velocities(self, scenario):
        config, derived = scenario
        mc.clear_caches()
        b1 = mc.build_batch(config, 100, seed=1)
        faster = config.replace(velocities_kmh=[150.0] * 4)
        b2 = mc.build_batch(faster, 100, seed=1)
        assert b1 is b2  # correlation does not enter the cached projections

    def test_gain_tables_shapes(self, scenario):
        config, derived = scenario
        gp, gc = mc.gain_tables(config, derived, 50, seed=1)
        assert gp.shape == (50, 4, 4)
        assert gc.shape == (50, 4)
        assert np.all(gp >= 0.0)


class TestNoma:
    def test_near_far_pairing(self):
        base = cm.default_config()
        config = base.replace(distances_m=[100.0, 150.0, 200.0, 300.0])
        derived = cm.derive_link(config)
        groups, share = mc.noma_allocation(config, derived)
        assert (0, 3) in groups and (1, 2) in groups
        assert share.sum() == pytest.approx(1.0, rel=1e-12)

    def test_ftpa_share(self):
        base = cm.default_config(num_users=2, num_tx_antennas=8,
                                 blocklength_private=[300] * 2,
                                 bler_common=[1e-6] * 2, bler_private=[1e-6] * 2,
                                 velocities_kmh=[110.0] * 2,
                                 distances_m=[1.0, 1.0])
        config = base.replace(distances_m=[
            cm.distance_for_gain(100.0, base), cm.distance_for_gain(1.0, base)])
        derived = cm.derive_link(config)
        _, share = mc.noma_allocation(config, derived, ftpa_decay=0.8)
        expected_weak = 100**0.8 / (100**0.8 + 1.0)
        assert share[1] == pytest.approx(expected_weak, rel=1e-6)

    def test_odd_user_count_singleton(self):
        base = cm.default_config(num_users=3, num_tx_antennas=8,
                                 blocklength_private=[300] * 3,
                                 bler_common=[1e-6] * 3, bler_private=[1e-6] * 3,
                                 velocities_kmh=[110.0] * 3,
                                 distances_m=[100.0, 200.0, 300.0])
        derived = cm.derive_link(base)
        groups, share = mc.noma_allocation(base, derived)
        sizes = sorted(len(g) for g in groups)
        assert sizes == [1, 2]
        assert share.sum() == pytest.approx(1.0, rel=1e-12)


class TestEvaluateScheme:
    def test_sdma_equals_fixed_allocation(self, scenario):
        config, derived = scenario
        est, alloc = mc.evaluate_scheme(mc.SchemeSpec("sdma"), config, derived,
                                        300, seed=2)
        direct = mc.saa_rates(opt.PowerAllocation(1.0, np.full(4, 0.25), np.zeros(4)),
                              config, derived, 300, seed=2)
        assert est.sum_rate == direct.sum_rate
        assert alloc.t == 1.0

    def test_noma_runs(self, scenario):
        config, derived = scenario
        est, alloc = mc.evaluate_scheme(mc.SchemeSpec("noma"), config, derived,
                                        300, seed=2)
        assert est.r_common == 0.0
        assert est.sum_rate > 0.0

    def test_budget_enforced(self, scenario):
        config, derived = scenario
        spec = mc.SchemeSpec("sdma_exhaustive",
                             {"grid_granularity": 0.025, "point_budget": 100})
        with pytest.raises(BudgetExceededError):
            mc.evaluate_scheme(spec, config, derived, 300, seed=2)

    def test_exhaustive_sdma_beats_uniform_when_coarse(self, scenario):
        config, derived = scenario
        spec = mc.SchemeSpec("sdma_exhaustive", {"grid_granularity": 0.25})
        est, alloc = mc.evaluate_scheme(spec, config, derived, 300, seed=2)
        assert alloc.mu.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.min(est.r_private) >= 0.0

    def test_noma_exhaustive_coarse(self, scenario):
        config, derived = scenario
        spec = mc.SchemeSpec("noma_exhaustive", {"grid_granularity": 0.25})
        est, alloc = mc.evaluate_scheme(spec, config, derived, 200, seed=2)
        assert est.sum_rate > 0.0

    def test_rsma_exhaustive_equal_coarse(self, scenario):
        config, derived = scenario
        spec = mc.SchemeSpec("rsma_exhaustive_equal", {"t_granularity": 0.05})
        est, alloc = mc.evaluate_scheme(spec, config, derived, 300, seed=2)
        assert 0.0 < alloc.t <= 1.0
        assert est.sum_rate > 0.0


class TestDefinitionErrorStudy:
    def test_shapes_and_determinism(self, scenario):
        config, derived = scenario
        a = mc.definition_error_study(config, derived, trials=5, mc_trials=500, seed=3)
        b = mc.definition_error_study(config, derived, trials=5, mc_trials=500, seed=3)
        for x, y in zip(a, b):
            assert x.shape == (5,)
            np.testing.assert_array_equal(x, y)
            assert np.all(x >= 0.0)
