"""Generalized-Gauss-Newton diagonal curvature.

Two routes are provided:

* ``db_diag`` backpropagates a *diagonal* curvature message layer by layer,
  re-diagonalizing after every step.  One call costs one forward plus one
  backward-like sweep; messages are vectors, so time and auxiliary memory
  grow linearly with the pixel count.  On networks whose input-Jacobians
  are all diagonal the re-diagonalization is a no-op and the result is the
  exact GGN diagonal.

* ``ggn_diag_exact`` runs the same recursion with the full (dense) message
  matrix and no diagonalization, which yields the exact GGN diagonal for
  any architecture but costs quadratically in the pixel count.  It refuses
  problems above a hard size cap.

Both routes support skip-connection blocks.  For a diagonal message the skip
step splits into the sub-network part and the identity part,

    diag(J_sc' M J_sc) = diag(J_g' M11 J_g) + diag(M22),

which ``skip_step`` computes exactly (full messages inside the sub-network)
and ``db_diag`` approximates by recursing with diagonal messages.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import ConfigError, NumericError, ShapeError, SizeLimitError
from .layers import MemMeter, Skip, seq_db, seq_exact, seq_forward_cache
from .network import Network

PROB_EPS = 1e-7
ORACLE_PARAM_CAP = 5000
ORACLE_OUTPUT_CAP = 4096
ORACLE_INTERFACE_CAP = 8192

__all__ = [
    "MemMeter", "PROB_EPS", "ORACLE_PARAM_CAP", "ORACLE_OUTPUT_CAP",
    "bce_logit_hessian", "db_diag", "ggn_diag_exact", "skip_step",
    "accumulate_dataset_curvature",
]


def clamp_probs(p):
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bce_logit_hessian(p):
    """Diagonal Hessian of the summed binary cross entropy w.r.t. logits.

    With pixel-independent Bernoulli likelihoods this is p_s (1 - p_s) per
    pixel; probabilities are clamped away from {0, 1} first.
    """
    p = clamp_probs(np.asarray(p, dtype=np.float64))
    return p * (1.0 - p)


def _prep_message(net, x, loss_h):
    y, caches = net.forward_cache(x)
    m = np.asarray(loss_h, dtype=np.float64).ravel()
    if m.size != net.out_size:
        raise ShapeError(
            f"loss Hessian has {m.size} entries, output has {net.out_size}")
    if not np.all(np.isfinite(m)):
        raise NumericError("non-finite loss Hessian")
    return m, caches


def db_diag(net: Network, x, loss_h, hook=None, meter: MemMeter | None = None):
    """Diagonal curvature backpropagation over all parameters of ``net``.

    ``loss_h`` is the diagonal loss Hessian at the network output.  The
    optional ``hook(path, expected_trace, actual_trace)`` fires after every
    atomic diagonalization step and receives the trace of the full one-step
    propagated matrix next to the trace of the diagonal message actually
    produced; the two are equal up to float association.
    """
    m, caches = _prep_message(net, x, loss_h)
    out = np.zeros(net.n_params)
    if meter is not None:
        meter.observe(m.nbytes + out.nbytes)
    seq_db(net.layers, net.theta, caches, m, out, hook, "", meter)
    return out


def ggn_diag_exact(net: Network, x, loss_h, meter: MemMeter | None = None):
    """Exact GGN diagonal via full-message backpropagation (no caps waived:
    quadratic in pixels, test scale only)."""
    if net.n_params > ORACLE_PARAM_CAP:
        raise SizeLimitError(
            f"{net.n_params} parameters exceed the exact-oracle cap "
            f"{ORACLE_PARAM_CAP}")
    if net.out_size > ORACLE_OUTPUT_CAP:
        raise SizeLimitError(
            f"{net.out_size} output pixels exceed the exact-oracle cap "
            f"{ORACLE_OUTPUT_CAP}")
    _check_interfaces(net.layers)
    m, caches = _prep_message(net, x, loss_h)
    bigm = np.diag(m)
    out = np.zeros(net.n_params)
    if meter is not None:
        meter.observe(bigm.nbytes + out.nbytes)
    seq_exact(net.layers, net.theta, caches, bigm, out, meter)
    return out


def _check_interfaces(layers):
    for lay in layers:
        if max(lay.in_size, lay.out_size) > ORACLE_INTERFACE_CAP:
            raise SizeLimitError(
                f"layer interface of {max(lay.in_size, lay.out_size)} entries "
                f"exceeds the exact-oracle cap {ORACLE_INTERFACE_CAP}")
        if isinstance(lay, Skip):
            _check_interfaces(lay.sub)


def skip_step(m, sub: Network, x):
    """Exact one-step propagation of a diagonal message through a skip block.

    ``m`` is the diagonal message over the concatenated (sub(x), x) output;
    returns diag(J_g' M11 J_g) + M22 over the input, with the sub-network
    Jacobian handled exactly (full messages, nested skips included).
    """
    m = np.asarray(m, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    y, caches = seq_forward_cache(sub.layers, sub.theta, x)
    s1 = int(np.prod(y.shape))
    if m.size != s1 + x.size:
        raise ShapeError(
            f"message has {m.size} entries, expected {s1} + {x.size}")
    bigm = np.diag(m[:s1])
    scratch = np.zeros(sub.n_params)
    inner = seq_exact(sub.layers, sub.theta, caches, bigm, scratch)
    return np.diag(inner) + m[s1:]


def heads_message(net: Network, probs):
    """Loss-Hessian message over the heads output: BCE curvature on the mean
    channel, zeros on the variance channels."""
    if net.heads is None:
        raise ConfigError("network has no head layer")
    m = np.zeros(net.out_size)
    sp = net.heads.mean_out_size
    m[:sp] = bce_logit_hessian(probs).ravel()
    return m


def accumulate_dataset_curvature(net: Network, images):
    """Sum of per-example GGN diagonals under the zero-variance BCE reduction,
    restricted to the shared + mean-head parameters.

    The per-example loss Hessian is evaluated at the current prediction
    sigmoid(mu(x)); variance-head channels carry no curvature, so the
    variance-head block is identically zero and dropped.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if len(images) == 0:
        raise ConfigError("dataset must be nonempty")
    per_example = np.empty((len(images), net.partition.mean_space))
    for i, x in enumerate(images):
        acts = net.forward(x)
        mu = acts[-1].reshape(net.out_shape)[0]
        probs = expit(mu)
        diag = db_diag(net, x, heads_message(net, probs))
        per_example[i] = diag[:net.partition.mean_space]
    return per_example.sum(axis=0)
