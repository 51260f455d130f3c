"""Low-rank Gaussian logit head: prediction, sampling, the Monte-Carlo
marginal-likelihood loss and MAP training.

The head models per-image logits as eta ~ N(mu, Sigma) with
Sigma = diag(d) + P' P, where d comes through a softplus and P is the raw
low-rank factor (rank 0 gives the diagonal variant).  The training loss is
the M-sample estimator

    loss = -logsumexp_m( sum_s log p(y_s | eta_s^(m)) ) + log M,

which reduces to the summed binary cross entropy when the variance is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .network import Network


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class LogitDistribution:
    """Gaussian over S pixel logits with covariance diag(diag) + factor' factor."""

    mean: np.ndarray          # (S,)
    diag: np.ndarray          # (S,) nonnegative
    factor: np.ndarray        # (rank, S)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
        self.diag = np.asarray(self.diag, dtype=np.float64).ravel()
        self.factor = np.asarray(self.factor, dtype=np.float64)
        s = self.mean.size
        if self.diag.shape != (s,) or self.factor.ndim != 2 \
                or self.factor.shape[1] != s:
            raise ShapeError("inconsistent logit distribution shapes")
        if np.any(self.diag < 0):
            raise ShapeError("logit variance diagonal must be nonnegative")

    @property
    def rank(self):
        return self.factor.shape[0]

    def cov(self):
        """Dense S x S covariance; test-scale convenience."""
        return np.diag(self.diag) + self.factor.T @ self.factor

    def sample(self, m, rng):
        """Draw m logit vectors via the low-rank reparameterization; no S x S
        matrix is formed."""
        s = self.mean.size
        eps0 = rng.standard_normal((m, s))
        eps1 = rng.standard_normal((m, self.rank)) if self.rank else None
        return self.sample_given(eps0, eps1)

    def sample_given(self, eps0, eps1):
        """Reparameterized samples from externally supplied standard-normal
        draws, so noise can be shared across weight samples."""
        eta = self.mean + np.sqrt(self.diag) * eps0
        if self.rank:
            eta = eta + eps1 @ self.factor
        return eta


def predict_logit_distribution(net: Network, x) -> LogitDistribution:
    """Forward pass split into the mean map and the (softplus-d, P) heads."""
    if net.heads is None or net.heads.var is None:
        raise ConfigError("network was built without a variance head")
    y = net.forward(x)[-1]
    rank = net.heads.rank
    mu = y[0].ravel()
    d = softplus(y[1]).ravel()
    p = y[2:2 + rank].reshape(rank, mu.size)
    return LogitDistribution(mu, d, p)


def predict_mean_logits(net: Network, x):
    """Mean-head logits only (used for curvature and for nets without a
    variance head)."""
    y = net.forward(x)[-1]
    return y.reshape(net.out_shape)[0].ravel()


def sample_logits(dist: LogitDistribution, m: int, rng):
    if m < 1:
        raise ConfigError("need at least one logit sample")
    return dist.sample(m, rng)


def _log_bernoulli(eta, y):
    # log p(y|eta) = -softplus(-eta) for y=1, -softplus(eta) for y=0
    return -(y * softplus(-eta) + (1.0 - y) * softplus(eta))


def ssn_loss(dist: LogitDistribution, y, m: int, rng) -> float:
    """Monte-Carlo negative marginal log-likelihood, in nats."""
    if m < 1:
        raise ConfigError("need at least one logit sample")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape != dist.mean.shape:
        raise ShapeError("mask shape does not match logits")
    eta = dist.sample(m, rng)
    ll = _log_bernoulli(eta, y).sum(axis=1)
    hi = ll.max()
    return float(-(hi + np.log(np.exp(ll - hi).sum())) + np.log(m))


def ssn_loss_and_grad(net: Network, x, y, m: int, rng):
    """Loss and its gradient w.r.t. all network parameters at fixed sampling
    noise (reparameterization).

    For networks without a variance head this is the summed BCE on the mean
    logits.  Returns (loss, grad over all parameters).
    """
    from .layers import seq_vjp

    y = np.asarray(y, dtype=np.float64).ravel()
    out, caches = net.forward_cache(x)
    hw = net.out_shape[1:]
    if net.heads is None or net.heads.var is None:
        mu = out.reshape(net.out_shape)[0].ravel()
        loss = float((softplus(-mu) * y + softplus(mu) * (1.0 - y)).sum())
        gout = (expit(mu) - y).reshape(net.out_shape)
    else:
        rank = net.heads.rank
        mu = out[0].ravel()
        raw = out[1].ravel()
        p = out[2:2 + rank].reshape(rank, mu.size)
        d = softplus(raw)
        std = np.sqrt(d)
        eps0 = rng.standard_normal((m, mu.size))
        eta = mu + std * eps0
        eps1 = rng.standard_normal((m, rank)) if rank else np.zeros((m, 0))
        if rank:
            eta = eta + eps1 @ p
        ll = _log_bernoulli(eta, y).sum(axis=1)
        hi = ll.max()
        w = np.exp(ll - hi)
        loss = float(-(hi + np.log(w.sum())) + np.log(m))
        w /= w.sum()
        g_eta = w[:, None] * (expit(eta) - y)          # dloss/deta per sample
        g_mu = g_eta.sum(axis=0)
        g_std = (g_eta * eps0).sum(axis=0)
        dstd_draw = np.where(std > 0,
                             expit(raw) / (2.0 * np.maximum(std, 1e-300)), 0.0)
        g_raw = g_std * dstd_draw
        gout = np.empty(net.out_shape)
        gout[0] = g_mu.reshape(hw)
        gout[1] = g_raw.reshape(hw)
        if rank:
            gout[2:2 + rank] = (eps1.T @ g_eta).reshape((rank,) + hw)
    if not np.isfinite(loss):
        raise NumericError("non-finite training loss")
    grad = np.zeros(net.n_params)
    seq_vjp(net.layers, net.theta, caches, gout, grad)
    return loss, grad


@dataclass
class TrainConfig:
    """Adam settings plus the per-evaluation logit sample count."""

    learning_rate: float = 1e-3
    batch_size: int = 10
    epochs: int = 60
    logit_samples: int = 20
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.logit_samples < 1:
            raise ConfigError("logit_samples must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("invalid epochs/batch_size")


class Adam:
    def __init__(self, n, lr, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1 ** self.t)
        vhat = self.v / (1 - self.b2 ** self.t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def train_map(net: Network, images, masks, cfg: TrainConfig):
    """Minimize the mean per-image loss with Adam; mutates ``net`` in place
    and returns the per-epoch loss trajectory."""
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    n = len(images)
    if n == 0:
        raise ConfigError("training set must be nonempty")
    opt = Adam(net.n_params, cfg.learning_rate, cfg.betas, cfg.eps)
    perm_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5e9)))
    losses = []
    for epoch in range(cfg.epochs):
        order = perm_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            grad = np.zeros(net.n_params)
            batch_loss = 0.0
            for idx in batch:
                rng = np.random.default_rng(
                    np.random.SeedSequence((cfg.seed, 0x10c, epoch, int(idx))))
                try:
                    loss, g = ssn_loss_and_grad(net, images[idx], masks[idx],
                                                cfg.logit_samples, rng)
                except NumericError as exc:
                    raise TrainingError(f"training diverged: {exc}", epoch) from exc
                grad += g
                batch_loss += loss
            grad /= len(batch)
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                raise TrainingError("training loss diverged", epoch)
            opt.step(net.theta, grad)
            epoch_loss += batch_loss * len(batch)
        losses.append(epoch_loss / n)
    return losses
