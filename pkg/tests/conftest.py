"""Shared oracles and random-network builders for the test suite."""

import numpy as np
import pytest

from seguq.layers import Conv2d, Dense, Flatten, ReLU, Sigmoid, Skip
from seguq.network import Network

FD_EPS = 1e-5


def fd_param_grad(net, x, v):
    """Central-difference gradient of <v, f(x)> w.r.t. every parameter."""
    v = np.asarray(v, dtype=np.float64).ravel()
    grad = np.empty(net.n_params)
    for i in range(net.n_params):
        orig = net.theta[i]
        net.theta[i] = orig + FD_EPS
        fp = float(net.forward(x)[-1].ravel() @ v)
        net.theta[i] = orig - FD_EPS
        fm = float(net.forward(x)[-1].ravel() @ v)
        net.theta[i] = orig
        grad[i] = (fp - fm) / (2 * FD_EPS)
    return grad


def fd_input_grad(net, x, v):
    """Central-difference gradient of <v, f(x)> w.r.t. the input."""
    v = np.asarray(v, dtype=np.float64).ravel()
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty(x.size)
    flat = x.ravel().copy()
    for i in range(x.size):
        xp = flat.copy()
        xp[i] += FD_EPS
        fp = float(net.forward(xp.reshape(x.shape))[-1].ravel() @ v)
        xp[i] -= 2 * FD_EPS
        fm = float(net.forward(xp.reshape(x.shape))[-1].ravel() @ v)
        grad[i] = (fp - fm) / (2 * FD_EPS)
    return grad.reshape(x.shape)


def jac_param_cols(net, x):
    """Full parameter Jacobian built column by column with forward mode."""
    jac = np.empty((net.out_size, net.n_params))
    for p in range(net.n_params):
        dt = np.zeros(net.n_params)
        dt[p] = 1.0
        jac[:, p] = net.jvp(x, dt).ravel()
    return jac


def jac_param_rows(net, x):
    """Full parameter Jacobian built row by row with reverse mode."""
    jac = np.empty((net.out_size, net.n_params))
    for o in range(net.out_size):
        v = np.zeros(net.out_size)
        v[o] = 1.0
        jac[o] = net.backward_grad(x, v.reshape(net.out_shape))
    return jac


def jac_input_cols(net, x):
    x = np.asarray(x, dtype=np.float64)
    jac = np.empty((net.out_size, x.size))
    for i in range(x.size):
        dx = np.zeros(x.size)
        dx[i] = 1.0
        jac[:, i] = net.jvp(x, np.zeros(net.n_params),
                            dx.reshape(x.shape)).ravel()
    return jac


def rel_err(got, want):
    got = np.asarray(got, dtype=np.float64).ravel()
    want = np.asarray(want, dtype=np.float64).ravel()
    scale = max(np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale


def random_skip_net(seed, nested=True, hw=4):
    """Small random conv net with a (optionally nested) skip block."""
    rng = np.random.default_rng(seed)
    c0 = int(rng.integers(1, 3))
    c1 = int(rng.integers(2, 4))
    c2 = int(rng.integers(1, 3))
    inner = [Conv2d(c1, c2), Sigmoid() if rng.random() < 0.5 else ReLU()]
    if nested:
        sub = [Conv2d(c1, c1), ReLU(), Skip(inner), Conv2d(c1 + c2, c1)]
    else:
        sub = [Conv2d(c1, c2), ReLU()]
    layers = [Conv2d(c0, c1), ReLU(), Skip(sub),
              Conv2d(c1 + (c1 if nested else c2), 1)]
    net = Network(layers, (c0, hw, hw), seed=int(rng.integers(1 << 31)))
    x = rng.random((c0, hw, hw))
    return net, x


def random_elementwise_net(seed, hw=4):
    """Net whose layers above the first all have diagonal input-Jacobians,
    so diagonal curvature backpropagation is exact on it."""
    rng = np.random.default_rng(seed)
    c = int(rng.integers(1, 3))
    n = c * hw * hw
    layers = [Conv2d(c, c), Flatten(), Dense(n, n), ReLU(), Dense(n, n),
              Sigmoid()]
    net = Network(layers, (c, hw, hw), seed=int(rng.integers(1 << 31)))
    for lay in layers:
        if isinstance(lay, Dense):
            w = net.theta[lay.offset:lay.offset + lay.n_in * lay.n_out]
            w2 = w.reshape(lay.n_out, lay.n_in)
            w2 *= np.eye(lay.n_out)
    x = rng.random((c, hw, hw))
    return net, x


@pytest.fixture(scope="session")
def unet_small():
    from seguq.network import build_unet
    return build_unet([4, 8, 16], rank=5, image_hw=(32, 32), seed=11)
