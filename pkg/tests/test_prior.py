import numpy as np
import pytest

from tgne.events import IntervalPartition
from tgne.inference import VariationalState
from tgne.prior import (
    PriorConfig,
    kl_gradients,
    kl_monte_carlo,
    kl_to_prior,
    prior_log_density,
    sample_prior,
)

LOG_2PI = np.log(2 * np.pi)


def random_state(rng, n, K, d, mu_scale=1.0):
    return VariationalState(
        mu=mu_scale * rng.standard_normal((n, K + 1, d)),
        log_sigma=rng.uniform(-1.5, 0.5, size=(n, K + 1)),
        beta=0.0,
    )


class TestSamplePrior:
    def test_initial_variance(self):
        pc = PriorConfig(tau=0.7, part=IntervalPartition.uniform(1), d=2, tau0=1.3)
        cfg = sample_prior(100_000, pc, seed=0)
        var = cfg.z[:, 0, :].var(axis=0)
        se = 1.3**2 * np.sqrt(2 / 100_000)
        assert np.all(np.abs(var - 1.3**2) < 3 * se)

    def test_telescoping_increment_variance(self):
        K = 5
        pc = PriorConfig(tau=0.9, part=IntervalPartition.uniform(K), d=1)
        cfg = sample_prior(100_000, pc, seed=1)
        diff = cfg.z[:, K, 0] - cfg.z[:, 0, 0]
        # total variance tau^2 * sum of interval lengths = tau^2
        se = 0.9**2 * np.sqrt(2 / 100_000)
        assert abs(diff.var() - 0.9**2) < 3 * se

    def test_degenerate_scales_collapse_to_zero(self):
        pc = PriorConfig(tau=1e-12, part=IntervalPartition.uniform(3), d=2, tau0=1e-12)
        cfg = sample_prior(50, pc, seed=2)
        assert np.all(np.abs(cfg.z) < 1e-9)

    def test_deterministic_under_seed(self):
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(2), d=2)
        a = sample_prior(5, pc, seed=3)
        b = sample_prior(5, pc, seed=3)
        assert np.array_equal(a.z, b.z)


class TestPriorLogDensity:
    def test_standard_normal_at_mode(self):
        pc = PriorConfig(tau=1.0, part=None, d=1)
        got = prior_log_density(np.zeros((1, 1, 1)), pc)
        assert np.isclose(got, -0.5 * LOG_2PI, rtol=1e-12)

    def test_two_factor_hand_computation(self):
        # z = (0, 1), tau0 = tau = 1, unit step: logN(0;0,1) + logN(1;0,1)
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(1), d=1)
        got = prior_log_density(np.array([[[0.0], [1.0]]]), pc)
        assert np.isclose(got, -LOG_2PI - 0.5, rtol=1e-12)
        assert np.isclose(got, -2.3378771, atol=1e-7)

    def test_not_translation_invariant(self):
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(2), d=2)
        rng = np.random.default_rng(4)
        z = rng.standard_normal((3, 3, 2))
        base = prior_log_density(z, pc)
        shifted = prior_log_density(z + 2.5, pc)
        assert not np.isclose(base, shifted)

    def test_nonuniform_partition_scales(self):
        part = IntervalPartition(np.array([0.0, 0.1, 1.0]))
        pc = PriorConfig(tau=2.0, part=part, d=1)
        z = np.array([[[0.0], [1.0], [1.0]]])
        # steps: tau*sqrt(0.1), tau*sqrt(0.9)
        s1, s2 = 2.0 * np.sqrt(0.1), 2.0 * np.sqrt(0.9)
        expected = (
            -0.5 * LOG_2PI - np.log(2.0)
            - 0.5 * LOG_2PI - np.log(s1) - 0.5 / s1**2
            - 0.5 * LOG_2PI - np.log(s2)
        )
        assert np.isclose(prior_log_density(z, pc), expected, rtol=1e-12)


class TestKlToPrior:
    def test_zero_when_q_is_prior_marginal(self):
        pc = PriorConfig(tau=1.0, part=None, d=3, tau0=0.8)
        vs = VariationalState(
            mu=np.zeros((2, 1, 3)),
            log_sigma=np.full((2, 1), np.log(0.8)),
            beta=0.0,
        )
        assert kl_to_prior(vs, pc) == 0.0

    def test_hand_example_equals_one(self):
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(1), d=1)
        vs = VariationalState(
            mu=np.array([[[0.0], [1.0]]]),
            log_sigma=np.zeros((1, 2)),
            beta=0.0,
        )
        assert abs(kl_to_prior(vs, pc) - 1.0) < 1e-9

    def test_nonnegative_on_random_states(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            K = int(rng.integers(1, 4))
            pc = PriorConfig(
                tau=float(rng.uniform(0.2, 3)),
                part=IntervalPartition.uniform(K),
                d=int(rng.integers(1, 4)),
                tau0=float(rng.uniform(0.2, 3)),
            )
            vs = random_state(rng, int(rng.integers(1, 4)), K, pc.d)
            assert kl_to_prior(vs, pc) >= 0.0

    def test_node_permutation_invariance(self):
        rng = np.random.default_rng(6)
        pc = PriorConfig(tau=0.8, part=IntervalPartition.uniform(3), d=2)
        vs = random_state(rng, 5, 3, 2)
        perm = rng.permutation(5)
        vs_p = VariationalState(
            mu=vs.mu[perm], log_sigma=vs.log_sigma[perm], beta=0.0
        )
        assert np.isclose(kl_to_prior(vs, pc), kl_to_prior(vs_p, pc), rtol=1e-12)

    def test_coercive_in_sigma(self):
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(2), d=2)
        mu = np.zeros((1, 3, 2))

        def kl_at(log_s):
            vs = VariationalState(mu=mu, log_sigma=np.full((1, 3), log_s), beta=0.0)
            return kl_to_prior(vs, pc)

        shrink = [kl_at(x) for x in (-2.0, -4.0, -6.0, -8.0)]
        grow = [kl_at(x) for x in (1.0, 2.0, 3.0, 4.0)]
        assert all(a < b for a, b in zip(shrink, shrink[1:]))
        assert all(a < b for a, b in zip(grow, grow[1:]))

    def test_rejects_nonpositive_sigma(self):
        pc = PriorConfig(tau=1.0, part=IntervalPartition.uniform(1), d=1)
        vs = VariationalState(
            mu=np.zeros((1, 2, 1)), log_sigma=np.array([[0.0, -np.inf]]), beta=0.0
        )
        with pytest.raises(ValueError):
            kl_to_prior(vs, pc)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            K = int(rng.integers(1, 4))
            d = int(rng.integers(1, 3))
            n = int(rng.integers(1, 3))
            pc = PriorConfig(
                tau=float(rng.uniform(0.3, 2)),
                part=IntervalPartition.uniform(K),
                d=d,
                tau0=float(rng.uniform(0.3, 2)),
            )
            vs = random_state(rng, n, K, d)
            d_mu, d_sigma = kl_gradients(vs, pc)
            d_log_sigma = vs.sigma * d_sigma
            h = 1e-5
            for _ in range(8):
                i = rng.integers(n)
                k = rng.integers(K + 1)
                a = rng.integers(d)
                mu_p = vs.mu.copy(); mu_p[i, k, a] += h
                mu_m = vs.mu.copy(); mu_m[i, k, a] -= h
                fd = (
                    kl_to_prior(VariationalState(mu_p, vs.log_sigma, 0.0), pc)
                    - kl_to_prior(VariationalState(mu_m, vs.log_sigma, 0.0), pc)
                ) / (2 * h)
                assert np.isclose(d_mu[i, k, a], fd, rtol=1e-6, atol=1e-8)
                ls_p = vs.log_sigma.copy(); ls_p[i, k] += h
                ls_m = vs.log_sigma.copy(); ls_m[i, k] -= h
                fd_s = (
                    kl_to_prior(VariationalState(vs.mu, ls_p, 0.0), pc)
                    - kl_to_prior(VariationalState(vs.mu, ls_m, 0.0), pc)
                ) / (2 * h)
                assert np.isclose(d_log_sigma[i, k], fd_s, rtol=1e-6, atol=1e-8)


class TestKlMonteCarlo:
    def test_zero_for_prior_marginals_static(self):
        pc = PriorConfig(tau=1.0, part=None, d=2, tau0=1.1)
        vs = VariationalState(
            mu=np.zeros((3, 1, 2)),
            log_sigma=np.full((3, 1), np.log(1.1)),
            beta=0.0,
        )
        est, se = kl_monte_carlo(vs, pc, 50_000, seed=8)
        assert abs(est) <= max(3 * se, 1e-12)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(9)
        pc = PriorConfig(tau=0.9, part=IntervalPartition.uniform(2), d=2)
        vs = random_state(rng, 2, 2, 2)
        a = kl_monte_carlo(vs, pc, 5000, seed=10)
        b = kl_monte_carlo(vs, pc, 5000, seed=10)
        assert a == b

    def test_agreement_with_closed_form(self):
        rng = np.random.default_rng(11)
        for trial in range(10):
            K = int(rng.integers(1, 4))
            d = int(rng.integers(1, 4))
            pc = PriorConfig(
                tau=float(rng.uniform(0.3, 2)),
                part=IntervalPartition.uniform(K),
                d=d,
                tau0=float(rng.uniform(0.3, 2)),
            )
            vs = random_state(rng, int(rng.integers(1, 4)), K, d)
            exact = kl_to_prior(vs, pc)
            est, se = kl_monte_carlo(vs, pc, 100_000, seed=trial)
            assert abs(est - exact) < 3 * se
