"""Weight posterior: fit formula against the exact curvature oracle,
sampling statistics, the frozen variance head and the tau limits."""

import numpy as np
import pytest
from scipy.special import expit

from seguq.curvature import ggn_diag_exact, heads_message
from seguq.errors import ConfigError
from seguq.laplace import (LaplacePosterior, fit, mean_logit_probs,
                           predictive_ensemble, sample_weights)
from seguq.network import build_unet
from seguq.ssn import predict_logit_distribution


@pytest.fixture(scope="module")
def tiny_net():
    return build_unet([2, 4], rank=2, image_hw=(8, 8), seed=1)


@pytest.fixture(scope="module")
def tiny_images():
    return np.random.default_rng(0).random((5, 1, 8, 8))


class TestFit:
    def test_posterior_variance_matches_exact_oracle(self, tiny_net,
                                                     tiny_images):
        tau = 0.01
        post = fit(tiny_net, tiny_images, tau)
        want = np.zeros(tiny_net.partition.mean_space)
        for x in tiny_images:
            mu = tiny_net.forward(x)[-1][0]
            h = heads_message(tiny_net, expit(mu))
            want += ggn_diag_exact(tiny_net, x, h)[:tiny_net.partition.mean_space]
        # db_diag is exact on the final heads block; on the trunk it is an
        # approximation, so compare only where the exact value applies
        part = tiny_net.partition
        np.testing.assert_allclose(post.precision[part.n_shared:],
                                   want[part.n_shared:] + tau, rtol=1e-9)
        assert post.precision.shape == (part.mean_space,)

    def test_heads_only_net_matches_exact_oracle_everywhere(self):
        # single final layer: diagonal backprop is exact, so the posterior
        # variance is exactly 1 / (exact GGN diag + tau)
        from seguq.layers import Heads
        from seguq.network import Network
        net = Network([Heads(1, 1)], (1, 4, 4), seed=4)
        images = np.random.default_rng(2).random((4, 1, 4, 4))
        tau = 0.25
        post = fit(net, images, tau)
        want = np.zeros(net.n_params)
        for x in images:
            mu = net.forward(x)[-1][0]
            want += ggn_diag_exact(net, x, heads_message(net, expit(mu)))
        np.testing.assert_allclose(post.variance,
                                   1.0 / (want[:post.map_weights.size] + tau),
                                   rtol=1e-12)

    def test_saturated_predictions_leave_prior_dominated_precision(self):
        net = build_unet([2, 4], rank=1, image_hw=(8, 8), seed=2)
        # push the mean-head bias far positive: predictions saturate at 1
        mean = net.heads.mean
        net.theta[mean.offset + mean.nw] = 50.0
        tau = 0.01
        post = fit(net, np.random.default_rng(1).random((3, 1, 8, 8)), tau)
        np.testing.assert_allclose(post.precision, tau, rtol=1e-2)

    def test_duplicating_the_dataset_doubles_curvature(self, tiny_net,
                                                       tiny_images):
        tau = 0.5
        single = fit(tiny_net, tiny_images, tau)
        double = fit(tiny_net, np.concatenate([tiny_images, tiny_images]), tau)
        np.testing.assert_allclose(double.precision - tau,
                                   2 * (single.precision - tau), rtol=1e-9)

    def test_nonpositive_tau_rejected(self, tiny_net, tiny_images):
        with pytest.raises(ConfigError):
            fit(tiny_net, tiny_images, 0.0)
        with pytest.raises(ConfigError):
            fit(tiny_net, tiny_images, -1.0)

    def test_tau_monotonicity_of_posterior_variance(self, tiny_net,
                                                    tiny_images):
        lo = fit(tiny_net, tiny_images, 0.01)
        hi = fit(tiny_net, tiny_images, 10.0)
        assert np.all(hi.variance <= lo.variance)


class TestSampleWeights:
    def test_huge_tau_collapses_to_map(self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 1e12)
        draws = sample_weights(post, 20, np.random.default_rng(0))
        dev = np.abs(draws - post.map_weights).max()
        assert dev < 1e-4

    def test_sample_variance_matches_inverse_precision(self):
        precision = np.array([1.0, 4.0, 100.0])
        post = LaplacePosterior(np.zeros(3), precision, 1.0)
        n = 100_000
        draws = sample_weights(post, n, np.random.default_rng(1))
        emp = draws.var(axis=0, ddof=1)
        want = 1.0 / precision
        se = want * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(emp - want) <= 3 * se)

    def test_default_sample_count_runs(self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        draws = sample_weights(post, 50, np.random.default_rng(2))
        assert draws.shape == (50, tiny_net.partition.mean_space)

    def test_seed_determinism(self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        a = sample_weights(post, 5, np.random.default_rng(3))
        b = sample_weights(post, 5, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_sample_count_validated(self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        with pytest.raises(ConfigError):
            sample_weights(post, 0, np.random.default_rng(0))


class TestPredictiveEnsemble:
    def test_variance_head_stays_frozen_at_map(self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        var_before = tiny_net.theta[tiny_net.partition.var_slice].copy()
        x = tiny_images[0]
        predictive_ensemble(tiny_net, post, x, 4, 3,
                            np.random.default_rng(0))
        np.testing.assert_array_equal(
            tiny_net.theta[tiny_net.partition.var_slice], var_before)

    def test_delta_posterior_reproduces_deterministic_prediction(
            self, tiny_net, tiny_images):
        post = fit(tiny_net, tiny_images, 1e12)
        x = tiny_images[1]
        rng = np.random.default_rng(5)
        dists, probs = predictive_ensemble(tiny_net, post, x, 1, 6, rng)
        ref = predict_logit_distribution(tiny_net, x)
        np.testing.assert_allclose(dists[0].mean, ref.mean, atol=1e-4)
        np.testing.assert_allclose(dists[0].diag, ref.diag, atol=1e-4)
        assert probs.shape == (1, 6, 64)

    def test_zero_variance_head_gives_sigmoid_of_mean_exactly(self,
                                                              tiny_images):
        net = build_unet([2, 4], rank=0, image_hw=(8, 8), seed=3)
        var = net.heads.var
        net.theta[var.offset:var.offset + var.n_params] = 0.0
        net.theta[var.offset + var.nw] = -60.0    # diag head output ~ 0
        post = fit(net, tiny_images, 1e12)
        x = tiny_images[2]
        dists, probs = predictive_ensemble(net, post, x, 2, 3,
                                           np.random.default_rng(6))
        for i, dist in enumerate(dists):
            want = expit(dist.mean)
            for j in range(3):
                np.testing.assert_allclose(probs[i, j], want, atol=1e-9)

    def test_mean_logit_probs_shape_and_determinism(self, tiny_net,
                                                    tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        a = mean_logit_probs(tiny_net, post, tiny_images[0], 4,
                             np.random.default_rng(7))
        b = mean_logit_probs(tiny_net, post, tiny_images[0], 4,
                             np.random.default_rng(7))
        assert a.shape == (4, 64)
        np.testing.assert_array_equal(a, b)

    def test_sampling_does_not_perturb_network_weights(self, tiny_net,
                                                       tiny_images):
        post = fit(tiny_net, tiny_images, 0.01)
        theta_before = tiny_net.theta.copy()
        predictive_ensemble(tiny_net, post, tiny_images[0], 3, 2,
                            np.random.default_rng(8))
        np.testing.assert_array_equal(tiny_net.theta, theta_before)
