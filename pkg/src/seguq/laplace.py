"""Diagonal Gaussian weight posterior over the shared + mean-head parameters.

The posterior is centered at the trained weights with per-parameter
precision equal to the accumulated GGN diagonal plus a prior precision tau.
Variance-head weights are excluded: they receive no curvature and stay
frozen at their trained values whenever a posterior sample is loaded into
the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .curvature import accumulate_dataset_curvature
from .errors import ConfigError
from .network import Network
from .ssn import predict_logit_distribution, predict_mean_logits


@dataclass
class LaplacePosterior:
    map_weights: np.ndarray       # (T,) shared + mean head at the mode
    precision: np.ndarray         # (T,) curvature + prior precision
    prior_precision: float

    def __post_init__(self):
        self.map_weights = np.asarray(self.map_weights, dtype=np.float64)
        self.precision = np.asarray(self.precision, dtype=np.float64)
        if np.any(self.precision <= 0):
            raise ConfigError("posterior precision must be positive")

    @property
    def variance(self):
        return 1.0 / self.precision


def fit(net: Network, images, tau: float) -> LaplacePosterior:
    """Laplace fit at the current weights of ``net``.

    precision_i = sum over the dataset of the per-example GGN diagonal,
    plus tau.  tau must be positive: with a flat prior a singular GGN would
    give an improper Gaussian.
    """
    if tau <= 0:
        raise ConfigError("prior precision tau must be > 0")
    ggn = accumulate_dataset_curvature(net, images)
    t = net.partition.mean_space
    return LaplacePosterior(net.theta[:t].copy(), ggn + tau, float(tau))


def sample_weights(post: LaplacePosterior, n: int, rng):
    """n posterior samples in the restricted (shared + mean head) space."""
    if n < 1:
        raise ConfigError("need at least one posterior sample")
    eps = rng.standard_normal((n, post.map_weights.size))
    return post.map_weights + eps / np.sqrt(post.precision)


def predictive_ensemble(net: Network, post: LaplacePosterior, x,
                        n_theta: int, m_eta: int, rng):
    """Monte-Carlo predictive: sample mean networks, then logits.

    Returns (dists, probs) where dists holds one logit distribution per
    weight sample and probs has shape (n_theta, m_eta, S) with the sigmoid
    of each sampled logit vector.  The logit noise is drawn once and shared
    across weight samples (common random numbers), so the per-weight
    marginal estimates collapse exactly together as the posterior tightens.
    Variance-head weights stay at the mode.
    """
    if n_theta < 1 or m_eta < 1:
        raise ConfigError("need n_theta >= 1 and m_eta >= 1")
    thetas = sample_weights(post, n_theta, rng)
    t = post.map_weights.size
    rank = net.heads.rank if net.heads is not None else 0
    s = net.out_shape[1] * net.out_shape[2]
    eps0 = rng.standard_normal((m_eta, s))
    eps1 = rng.standard_normal((m_eta, rank)) if rank else None
    saved = net.theta.copy()
    dists = []
    probs = np.empty((n_theta, m_eta, s))
    try:
        for i in range(n_theta):
            net.theta[:t] = thetas[i]
            dist = predict_logit_distribution(net, x)
            dists.append(dist)
            probs[i] = expit(dist.sample_given(eps0, eps1))
    finally:
        net.theta[:] = saved
    return dists, probs


def mean_logit_probs(net: Network, post: LaplacePosterior, x, n_theta, rng):
    """sigmoid of the mean-head logits for each posterior sample; used both
    for the pixel-variance measure and for Dirac (no variance head) models."""
    thetas = sample_weights(post, n_theta, rng)
    t = post.map_weights.size
    saved = net.theta.copy()
    out = None
    try:
        for i in range(n_theta):
            net.theta[:t] = thetas[i]
            mu = predict_mean_logits(net, x)
            if out is None:
                out = np.empty((n_theta, mu.size))
            out[i] = expit(mu)
    finally:
        net.theta[:] = saved
    return out
