"""Network container, parameter partition and the U-net builder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .layers import (AvgPool2, Conv2d, Heads, Layer, ReLU, Skip, Upsample2,
                     seq_forward_cache, seq_jvp, seq_vjp)


@dataclass(frozen=True)
class ParamPartition:
    """Split of the flat weight vector into shared trunk, mean head and
    variance head.  ``mean_space`` is the dimension of the restricted
    parameter space the weight posterior lives in (shared + mean head)."""

    n_shared: int
    n_mean: int
    n_var: int

    @property
    def total(self) -> int:
        return self.n_shared + self.n_mean + self.n_var

    @property
    def mean_space(self) -> int:
        return self.n_shared + self.n_mean

    @property
    def shared_slice(self):
        return slice(0, self.n_shared)

    @property
    def mean_slice(self):
        return slice(self.n_shared, self.n_shared + self.n_mean)

    @property
    def var_slice(self):
        return slice(self.n_shared + self.n_mean, self.total)


class Network:
    """An ordered stack of layers over one flat float64 parameter vector."""

    def __init__(self, layers, in_shape, seed=0, theta=None):
        self.layers: list[Layer] = list(layers)
        self.in_shape = tuple(in_shape)
        shape, offset = self.in_shape, 0
        for lay in self.layers:
            shape, offset = lay.bind(shape, offset)
        self.out_shape = shape
        self.out_size = int(np.prod(shape))
        self.n_params = offset
        if theta is not None:
            if theta.shape != (offset,):
                raise ShapeError(f"theta must have shape ({offset},)")
            self.theta = theta.astype(np.float64)
        else:
            self.theta = np.zeros(offset)
            rng = np.random.default_rng(seed)
            for lay in self.layers:
                lay.init_params(self.theta, rng)
        last = self.layers[-1] if self.layers else None
        if isinstance(last, Heads):
            self.heads = last
            self.partition = ParamPartition(last.offset, last.n_mean, last.n_var)
        else:
            self.heads = None
            self.partition = ParamPartition(self.n_params, 0, 0)

    # ------------------------------------------------------------------
    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.in_shape:
            raise ShapeError(f"input shape {x.shape} != declared {self.in_shape}")
        return x

    def forward(self, x):
        """Run the network; returns all activations x_0 .. x_L."""
        x = self._check_input(x)
        acts = [x]
        for lay in self.layers:
            x = lay.forward(self.theta, x)
            acts.append(x)
        return acts

    def forward_cache(self, x):
        x = self._check_input(x)
        return seq_forward_cache(self.layers, self.theta, x)

    def backward_grad(self, x, loss_grad):
        """Gradient of a scalar loss w.r.t. every parameter, given the loss
        gradient at the network output."""
        loss_grad = np.asarray(loss_grad, dtype=np.float64)
        if loss_grad.shape != self.out_shape:
            raise ShapeError(
                f"loss gradient shape {loss_grad.shape} != output {self.out_shape}")
        if not np.all(np.isfinite(loss_grad)):
            raise NumericError("non-finite upstream gradient")
        _, caches = self.forward_cache(x)
        grad = np.zeros(self.n_params)
        seq_vjp(self.layers, self.theta, caches, loss_grad, grad)
        return grad

    def jvp(self, x, dtheta, dx=None):
        """Forward-mode directional derivative of the output."""
        x = self._check_input(x)
        _, caches = self.forward_cache(x)
        if dx is None:
            dx = np.zeros(self.in_shape)
        return seq_jvp(self.layers, self.theta, caches, dx, dtheta)

    def param_vjp(self, index, x, v):
        """J_theta' v for layer ``index``; empty for parameter-free layers."""
        _, caches = self.forward_cache(self._check_input(x))
        lay = self.layers[index]
        # v must first be pulled back through the layers above ``index``
        for j in range(len(self.layers) - 1, index, -1):
            v = self.layers[j].vjp_input(self.theta, caches[j], v)
        return lay.vjp_param(self.theta, caches[index], v)

    def input_vjp(self, index, x, v):
        """J_x' v for layer ``index`` at its forward-pass input."""
        _, caches = self.forward_cache(self._check_input(x))
        for j in range(len(self.layers) - 1, index, -1):
            v = self.layers[j].vjp_input(self.theta, caches[j], v)
        return self.layers[index].vjp_input(self.theta, caches[index], v)

    def copy(self):
        clone = object.__new__(Network)
        clone.__dict__.update(self.__dict__)
        clone.theta = self.theta.copy()
        return clone


def _unet_block(channels, level):
    c = channels[level]
    if level == len(channels) - 1:
        return [Conv2d(c, c), ReLU()]
    deeper = channels[level + 1]
    sub = ([AvgPool2(), Conv2d(c, deeper), ReLU()]
           + _unet_block(channels, level + 1)
           + [Conv2d(deeper, c), ReLU(), Upsample2()])
    return [Skip(sub), Conv2d(2 * c, c), ReLU()]


def build_unet(channels, rank, image_hw, in_channels=1, variance_head=True,
               seed=0):
    """Encoder/decoder network with nested skip blocks and two output heads.

    ``channels`` is the feature ladder from the finest to the coarsest
    resolution; each deeper level halves the spatial extents with a 2x2
    average pool and returns through nearest-neighbour upsampling.  The
    final feature map feeds one mean-head conv and, when ``variance_head``,
    one variance-head conv with 1 + rank output channels.
    """
    channels = list(channels)
    if not channels:
        raise ConfigError("channel ladder must be nonempty")
    if rank < 0:
        raise ConfigError("rank must be >= 0")
    h, w = image_hw
    factor = 2 ** (len(channels) - 1)
    if h % factor or w % factor:
        raise ConfigError(
            f"image extents {image_hw} not divisible by {factor} "
            f"(depth {len(channels)})")
    layers = [Conv2d(in_channels, channels[0]), ReLU()]
    layers += _unet_block(channels, 0)
    layers.append(Heads(channels[0], rank, variance_head=variance_head))
    return Network(layers, (in_channels, h, w), seed=seed)
