"""Network layers with exact Jacobian operators.

Every layer implements, besides the forward map, four linear-algebra views
of its Jacobians that the rest of the package is built on:

* ``vjp_input`` / ``vjp_param``: transposed-Jacobian products (reverse mode),
* ``jvp``: Jacobian products (forward mode),
* ``db_step``: one step of diagonal curvature backpropagation.  Given a
  diagonal message ``m`` over its output it emits ``diag(J_theta' M J_theta)``
  for its own parameters and returns ``diag(J_x' M J_x)`` for its input,
* ``exact_step``: the same step without any diagonalization, propagating the
  full (symmetric) message matrix.  Quadratic in layer width; used by the
  exact curvature oracle only.

Parameters of all layers of a network live in one flat float64 vector;
``bind`` assigns each layer its slice.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ConfigError, NumericError, ShapeError


class MemMeter:
    """Peak tracker for auxiliary buffer bytes in curvature recursions."""

    def __init__(self):
        self.peak = 0

    def observe(self, nbytes: int):
        if nbytes > self.peak:
            self.peak = int(nbytes)


def _size(shape):
    return int(np.prod(shape)) if shape else 1


class Layer:
    kind = "layer"
    n_params = 0

    def bind(self, in_shape, offset):
        """Fix shapes and the parameter slice; returns (out_shape, next_offset)."""
        self.in_shape = tuple(in_shape)
        self.offset = offset
        self.out_shape = self._infer_out_shape(self.in_shape)
        self.in_size = _size(self.in_shape)
        self.out_size = _size(self.out_shape)
        return self.out_shape, offset + self.n_params

    def _infer_out_shape(self, in_shape):
        return in_shape

    def init_params(self, theta, rng):
        pass

    def label(self):
        return self.kind

    # forward -----------------------------------------------------------
    def forward(self, theta, x):
        raise NotImplementedError

    def forward_cache(self, theta, x):
        return self.forward(theta, x), x

    # reverse mode --------------------------------------------------------
    def vjp_input(self, theta, cache, v):
        raise NotImplementedError

    def vjp_param_into(self, theta, cache, v, out):
        pass

    def vjp_param(self, theta, cache, v):
        out = np.zeros(self.n_params)
        self.vjp_param_into(theta, cache, v, out)
        return out

    def vjp_both(self, theta, cache, v, grad_out):
        """Parameter accumulation plus input VJP in one pass."""
        if grad_out is not None and self.n_params:
            self.vjp_param_into(theta, cache, v, grad_out)
        return self.vjp_input(theta, cache, v)

    def vjp_input_mat(self, theta, cache, v_batch):
        """Transposed input-Jacobian applied to a batch; returns (B, in_size)."""
        v_batch = v_batch.reshape((len(v_batch),) + self.out_shape)
        return np.stack([self.vjp_input(theta, cache, v).ravel()
                         for v in v_batch])

    # forward mode --------------------------------------------------------
    def jvp(self, theta, cache, dx, dtheta):
        raise NotImplementedError

    # diagonal curvature ---------------------------------------------------
    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        raise NotImplementedError

    def jac_row_sq(self, theta, cache):
        """Squared row norms of the input-Jacobian, flat over the output."""
        raise NotImplementedError

    def _hook(self, hook, path, m, m_in, theta, cache):
        if hook is not None:
            expected = float(np.dot(m, self.jac_row_sq(theta, cache)))
            hook(path or self.label(), expected, float(m_in.sum()))

    # exact curvature --------------------------------------------------------
    def exact_step(self, theta, cache, bigm, out, meter=None):
        if self.n_params:
            self.param_curv_full(theta, cache, bigm, out)
        return self._exact_input(theta, cache, bigm, meter)

    def param_curv_full(self, theta, cache, bigm, out):
        raise NotImplementedError

    def _exact_input(self, theta, cache, bigm, meter):
        # two batched-VJP sweeps: J' M J = J' (M J)', with M symmetric
        y = self.vjp_input_mat(theta, cache, bigm)
        if meter is not None:
            meter.observe(bigm.nbytes + y.nbytes)
        z = self.vjp_input_mat(theta, cache, np.ascontiguousarray(y.T))
        return np.ascontiguousarray(z.T)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.n_params = self.n_in * self.n_out + self.n_out

    def label(self):
        return f"dense({self.n_in}->{self.n_out})"

    def _infer_out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.n_in:
            raise ShapeError(f"dense expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def init_params(self, theta, rng):
        bound = np.sqrt(6.0 / self.n_in)
        nw = self.n_in * self.n_out
        theta[self.offset:self.offset + nw] = rng.uniform(-bound, bound, nw)
        theta[self.offset + nw:self.offset + self.n_params] = 0.0

    def _w(self, theta):
        nw = self.n_in * self.n_out
        return theta[self.offset:self.offset + nw].reshape(self.n_out, self.n_in)

    def _b(self, theta):
        nw = self.n_in * self.n_out
        return theta[self.offset + nw:self.offset + self.n_params]

    def forward(self, theta, x):
        return self._w(theta) @ x + self._b(theta)

    def vjp_input(self, theta, cache, v):
        return self._w(theta).T @ v

    def vjp_input_mat(self, theta, cache, v_batch):
        return v_batch.reshape(len(v_batch), self.n_out) @ self._w(theta)

    def vjp_param_into(self, theta, cache, v, out):
        nw = self.n_in * self.n_out
        out[self.offset:self.offset + nw] += np.outer(v, cache).ravel()
        out[self.offset + nw:self.offset + self.n_params] += v

    def jvp(self, theta, cache, dx, dtheta):
        nw = self.n_in * self.n_out
        dw = dtheta[self.offset:self.offset + nw].reshape(self.n_out, self.n_in)
        db = dtheta[self.offset + nw:self.offset + self.n_params]
        return self._w(theta) @ dx + dw @ cache + db

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        w = self._w(theta)
        nw = self.n_in * self.n_out
        out[self.offset:self.offset + nw] += np.outer(m, cache * cache).ravel()
        out[self.offset + nw:self.offset + self.n_params] += m
        m_in = (w * w).T @ m
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        w = self._w(theta)
        return (w * w).sum(axis=1)

    def param_curv_full(self, theta, cache, bigm, out):
        nw = self.n_in * self.n_out
        d = np.diag(bigm)
        out[self.offset:self.offset + nw] += np.outer(d, cache * cache).ravel()
        out[self.offset + nw:self.offset + self.n_params] += d


class Conv2d(Layer):
    """Stride-1 convolution with zero "same" padding (3x3 by default)."""

    kind = "conv2d"

    def __init__(self, cin, cout, ksize=3):
        self.cin, self.cout, self.k = int(cin), int(cout), int(ksize)
        self.nw = self.cout * self.cin * self.k * self.k
        self.n_params = self.nw + self.cout

    def label(self):
        return f"conv2d({self.cin}->{self.cout})"

    def _infer_out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.cin:
            raise ShapeError(f"conv2d expects ({self.cin},H,W), got {in_shape}")
        return (self.cout,) + in_shape[1:]

    def init_params(self, theta, rng):
        bound = np.sqrt(6.0 / (self.cin * self.k * self.k))
        theta[self.offset:self.offset + self.nw] = rng.uniform(-bound, bound, self.nw)
        theta[self.offset + self.nw:self.offset + self.n_params] = 0.0

    def _w(self, theta):
        return theta[self.offset:self.offset + self.nw].reshape(
            self.cout, self.cin, self.k, self.k)

    def _b(self, theta):
        return theta[self.offset + self.nw:self.offset + self.n_params]

    def forward(self, theta, x):
        return kernels.conv2d_forward(x, self._w(theta), self._b(theta))

    def vjp_input(self, theta, cache, v):
        return kernels.conv2d_vjp_input(self._w(theta), v)

    def vjp_input_mat(self, theta, cache, v_batch):
        v_batch = np.ascontiguousarray(
            v_batch.reshape((len(v_batch),) + self.out_shape))
        out = kernels.conv2d_vjp_input_batch(self._w(theta), v_batch)
        return out.reshape(len(v_batch), self.in_size)

    def vjp_param_into(self, theta, cache, v, out):
        dw, db = kernels.conv2d_vjp_weight(cache, v, self.cout, self.k, self.k)
        out[self.offset:self.offset + self.nw] += dw.ravel()
        out[self.offset + self.nw:self.offset + self.n_params] += db

    def jvp(self, theta, cache, dx, dtheta):
        dw = dtheta[self.offset:self.offset + self.nw].reshape(
            self.cout, self.cin, self.k, self.k)
        db = dtheta[self.offset + self.nw:self.offset + self.n_params]
        y = kernels.conv2d_forward(dx, self._w(theta), np.zeros(self.cout))
        return y + kernels.conv2d_forward(cache, dw, db)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        w = self._w(theta)
        mm = m.reshape(self.out_shape)
        dw, db = kernels.conv2d_vjp_weight(cache * cache, mm,
                                           self.cout, self.k, self.k)
        out[self.offset:self.offset + self.nw] += dw.ravel()
        out[self.offset + self.nw:self.offset + self.n_params] += db
        m_in = kernels.conv2d_vjp_input(w * w, mm).ravel()
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        w = self._w(theta)
        ones = np.ones(self.in_shape)
        return kernels.conv2d_forward(ones, w * w, np.zeros(self.cout)).ravel()

    def param_curv_full(self, theta, cache, bigm, out):
        # each weight touches a single output channel, so only the per-channel
        # diagonal blocks of the message enter the parameter diagonal
        h, wd = self.in_shape[1], self.in_shape[2]
        sp = h * wd
        ph = self.k // 2
        xp = np.zeros((self.cin, h + 2 * ph, wd + 2 * ph))
        xp[:, ph:ph + h, ph:ph + wd] = cache
        taps = np.empty((self.cin * self.k * self.k, sp))
        idx = 0
        for c in range(self.cin):
            for dy in range(self.k):
                for dx in range(self.k):
                    taps[idx] = xp[c, dy:dy + h, dx:dx + wd].ravel()
                    idx += 1
        wview = out[self.offset:self.offset + self.nw].reshape(self.cout, -1)
        bview = out[self.offset + self.nw:self.offset + self.n_params]
        for o in range(self.cout):
            blk = bigm[o * sp:(o + 1) * sp, o * sp:(o + 1) * sp]
            g = taps @ blk
            wview[o] += (g * taps).sum(axis=1)
            bview[o] += blk.sum()


class ReLU(Layer):
    kind = "relu"

    def forward(self, theta, x):
        return np.maximum(x, 0.0)

    def vjp_input(self, theta, cache, v):
        return v * (cache > 0)

    def vjp_input_mat(self, theta, cache, v_batch):
        d = (cache > 0).ravel()
        return v_batch.reshape(len(v_batch), -1) * d

    def jvp(self, theta, cache, dx, dtheta):
        return dx * (cache > 0)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        m_in = m * (cache > 0).ravel()
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        return (cache > 0).astype(np.float64).ravel()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, theta, x):
        return expit(x)

    def forward_cache(self, theta, x):
        s = expit(x)
        return s, s

    def _deriv(self, cache):
        return cache * (1.0 - cache)

    def vjp_input(self, theta, cache, v):
        return v * self._deriv(cache)

    def vjp_input_mat(self, theta, cache, v_batch):
        return v_batch.reshape(len(v_batch), -1) * self._deriv(cache).ravel()

    def jvp(self, theta, cache, dx, dtheta):
        return dx * self._deriv(cache)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        m_in = m * self.jac_row_sq(theta, cache)
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        d = self._deriv(cache).ravel()
        return d * d


class Flatten(Layer):
    kind = "flatten"

    def _infer_out_shape(self, in_shape):
        return (_size(in_shape),)

    def forward(self, theta, x):
        return x.ravel()

    def vjp_input(self, theta, cache, v):
        return v.reshape(self.in_shape)

    def vjp_input_mat(self, theta, cache, v_batch):
        return v_batch.reshape(len(v_batch), -1)

    def jvp(self, theta, cache, dx, dtheta):
        return dx.ravel()

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        self._hook(hook, path, m, m, theta, cache)
        return m

    def jac_row_sq(self, theta, cache):
        return np.ones(self.out_size)


class AvgPool2(Layer):
    kind = "avg_pool2"

    def _infer_out_shape(self, in_shape):
        c, h, w = in_shape
        if h % 2 or w % 2:
            raise ConfigError(f"avg_pool2 needs even extents, got {in_shape}")
        return (c, h // 2, w // 2)

    def forward(self, theta, x):
        c, h, w = x.shape
        return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp_input(self, theta, cache, v):
        return np.repeat(np.repeat(v, 2, axis=1), 2, axis=2) / 4.0

    def vjp_input_mat(self, theta, cache, v_batch):
        v_batch = v_batch.reshape((len(v_batch),) + self.out_shape)
        up = np.repeat(np.repeat(v_batch, 2, axis=2), 2, axis=3) / 4.0
        return up.reshape(len(v_batch), -1)

    def jvp(self, theta, cache, dx, dtheta):
        return self.forward(theta, dx)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        v = m.reshape(self.out_shape)
        m_in = (np.repeat(np.repeat(v, 2, axis=1), 2, axis=2) / 16.0).ravel()
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        return np.full(self.out_size, 0.25)


class Upsample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    kind = "upsample2"

    def _infer_out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, 2 * h, 2 * w)

    def forward(self, theta, x):
        return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)

    def vjp_input(self, theta, cache, v):
        c, h2, w2 = v.shape
        return v.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4))

    def vjp_input_mat(self, theta, cache, v_batch):
        b = len(v_batch)
        c, h2, w2 = self.out_shape
        red = v_batch.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return red.reshape(b, -1)

    def jvp(self, theta, cache, dx, dtheta):
        return self.forward(theta, dx)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        m_in = self.vjp_input(theta, cache, m.reshape(self.out_shape)).ravel()
        self._hook(hook, path, m, m_in, theta, cache)
        return m_in

    def jac_row_sq(self, theta, cache):
        return np.ones(self.out_size)


class Skip(Layer):
    """Skip-connection block: x -> (sub(x), x), concatenated along axis 0.

    For feature maps this is channel concatenation; the sub-network output
    must match the input spatially.  The input-Jacobian stacks the
    sub-network Jacobian over an identity block, which ``db_step`` and
    ``exact_step`` exploit: the identity part of the message passes through
    untouched.
    """

    kind = "skip"

    def __init__(self, sub):
        self.sub = list(sub)

    def label(self):
        return f"skip[{len(self.sub)}]"

    def bind(self, in_shape, offset):
        self.in_shape = tuple(in_shape)
        self.offset = offset
        shape = self.in_shape
        for lay in self.sub:
            shape, offset = lay.bind(shape, offset)
        self.sub_out_shape = shape
        if len(shape) != len(self.in_shape):
            raise ShapeError("skip sub-network changed rank")
        if len(shape) == 3 and shape[1:] != self.in_shape[1:]:
            raise ShapeError(
                f"skip sub-network output {shape} not spatially compatible "
                f"with input {self.in_shape}")
        self.out_shape = (shape[0] + self.in_shape[0],) + self.in_shape[1:]
        self.in_size = _size(self.in_shape)
        self.out_size = _size(self.out_shape)
        self.sub_out_size = _size(shape)
        self.n_params = sum(l.n_params for l in self.sub)
        return self.out_shape, offset

    def init_params(self, theta, rng):
        for lay in self.sub:
            lay.init_params(theta, rng)

    def forward(self, theta, x):
        y = x
        for lay in self.sub:
            y = lay.forward(theta, y)
        return np.concatenate([y, x], axis=0)

    def forward_cache(self, theta, x):
        y, caches = seq_forward_cache(self.sub, theta, x)
        return np.concatenate([y, x], axis=0), (x, caches)

    def _split(self, v):
        flat = v.ravel()
        v1 = flat[:self.sub_out_size].reshape(self.sub_out_shape)
        v2 = flat[self.sub_out_size:].reshape(self.in_shape)
        return v1, v2

    def vjp_input(self, theta, cache, v):
        return self.vjp_both(theta, cache, v, None)

    def vjp_param_into(self, theta, cache, v, out):
        _, caches = cache
        v1, _ = self._split(v)
        seq_vjp(self.sub, theta, caches, v1, out)

    def vjp_both(self, theta, cache, v, grad_out):
        _, caches = cache
        v1, v2 = self._split(v)
        return seq_vjp(self.sub, theta, caches, v1, grad_out) + v2

    def jvp(self, theta, cache, dx, dtheta):
        _, caches = cache
        dy = seq_jvp(self.sub, theta, caches, dx, dtheta)
        return np.concatenate([dy, dx], axis=0)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        _, caches = cache
        m1 = m[:self.sub_out_size]
        m2 = m[self.sub_out_size:]
        m_sub = seq_db(self.sub, theta, caches, m1, out, hook,
                       path + ".", meter)
        return m_sub + m2

    def exact_step(self, theta, cache, bigm, out, meter=None):
        _, caches = cache
        s1 = self.sub_out_size
        m11 = np.ascontiguousarray(bigm[:s1, :s1])
        m12 = bigm[:s1, s1:]
        m22 = bigm[s1:, s1:]
        inner = seq_exact(self.sub, theta, caches, m11, out, meter)
        # cross block J_g' M12 (columns of M12 live in the sub output space)
        cross = seq_vjp_mat(self.sub, theta, caches,
                            np.ascontiguousarray(m12.T)).T
        return inner + cross + cross.T + m22


class Heads(Layer):
    """Final fan-out: one mean conv and (optionally) one variance conv applied
    to the same feature map, outputs concatenated along channels.

    Channel 0 of the output is the mean logit map; with a variance head the
    remaining 1 + rank channels are the raw diagonal map and the low-rank
    factor rows.
    """

    kind = "heads"

    def __init__(self, cin, rank, variance_head=True, ksize=3):
        self.rank = int(rank)
        self.has_var = bool(variance_head)
        self.mean = Conv2d(cin, 1, ksize)
        self.var = Conv2d(cin, 1 + self.rank, ksize) if self.has_var else None

    def label(self):
        return "heads"

    def bind(self, in_shape, offset):
        self.in_shape = tuple(in_shape)
        self.offset = offset
        shape_m, offset = self.mean.bind(in_shape, offset)
        self.n_mean = self.mean.n_params
        if self.var is not None:
            shape_v, offset = self.var.bind(in_shape, offset)
            cout = shape_m[0] + shape_v[0]
            self.n_var = self.var.n_params
        else:
            cout = shape_m[0]
            self.n_var = 0
        self.out_shape = (cout,) + self.in_shape[1:]
        self.in_size = _size(self.in_shape)
        self.out_size = _size(self.out_shape)
        self.mean_out_size = _size(shape_m)
        self.n_params = self.n_mean + self.n_var
        return self.out_shape, offset

    def init_params(self, theta, rng):
        self.mean.init_params(theta, rng)
        if self.var is not None:
            self.var.init_params(theta, rng)

    def forward(self, theta, x):
        ym = self.mean.forward(theta, x)
        if self.var is None:
            return ym
        return np.concatenate([ym, self.var.forward(theta, x)], axis=0)

    def _split(self, v):
        flat = v.ravel()
        vm = flat[:self.mean_out_size].reshape(self.mean.out_shape)
        vv = flat[self.mean_out_size:].reshape(
            self.var.out_shape) if self.var is not None else None
        return vm, vv

    def vjp_input(self, theta, cache, v):
        vm, vv = self._split(v)
        dx = self.mean.vjp_input(theta, cache, vm)
        if vv is not None:
            dx = dx + self.var.vjp_input(theta, cache, vv)
        return dx

    def vjp_param_into(self, theta, cache, v, out):
        vm, vv = self._split(v)
        self.mean.vjp_param_into(theta, cache, vm, out)
        if vv is not None:
            self.var.vjp_param_into(theta, cache, vv, out)

    def jvp(self, theta, cache, dx, dtheta):
        dm = self.mean.jvp(theta, cache, dx, dtheta)
        if self.var is None:
            return dm
        return np.concatenate([dm, self.var.jvp(theta, cache, dx, dtheta)],
                              axis=0)

    def db_step(self, theta, cache, m, out, hook=None, path="", meter=None):
        mm = m[:self.mean_out_size]
        m_in = self.mean.db_step(theta, cache, mm, out)
        exp = None
        if hook is not None:
            exp = float(np.dot(mm, self.mean.jac_row_sq(theta, cache)))
        if self.var is not None:
            mv = m[self.mean_out_size:]
            m_in = m_in + self.var.db_step(theta, cache, mv, out)
            if hook is not None:
                exp += float(np.dot(mv, self.var.jac_row_sq(theta, cache)))
        if hook is not None:
            hook(path or self.label(), exp, float(m_in.sum()))
        return m_in

    def exact_step(self, theta, cache, bigm, out, meter=None):
        sm = self.mean_out_size
        m_mm = np.ascontiguousarray(bigm[:sm, :sm])
        self.mean.param_curv_full(theta, cache, m_mm, out)
        m_in = self.mean._exact_input(theta, cache, m_mm, meter)
        if self.var is not None:
            m_vv = np.ascontiguousarray(bigm[sm:, sm:])
            self.var.param_curv_full(theta, cache, m_vv, out)
            m_in = m_in + self.var._exact_input(theta, cache, m_vv, meter)
            m_mv = np.ascontiguousarray(bigm[:sm, sm:])
            # cross block J_m' M_mv J_v: rows of M_mv are var-output vectors
            y = self.var.vjp_input_mat(theta, cache, m_mv)
            z = self.mean.vjp_input_mat(theta, cache, np.ascontiguousarray(y.T))
            cross = np.ascontiguousarray(z.T)
            m_in = m_in + cross + cross.T
        return m_in


# ---------------------------------------------------------------------------
# sequence helpers shared by Network, Skip and the curvature drivers
# ---------------------------------------------------------------------------

def seq_forward_cache(layers, theta, x):
    caches = []
    for lay in layers:
        x, c = lay.forward_cache(theta, x)
        caches.append(c)
    return x, caches


def seq_vjp(layers, theta, caches, v, grad_out):
    """Reverse sweep; accumulates parameter gradients when grad_out is given."""
    for lay, cache in zip(reversed(layers), reversed(caches)):
        v = lay.vjp_both(theta, cache, v, grad_out)
    return v


def seq_vjp_mat(layers, theta, caches, v_batch):
    for lay, cache in zip(reversed(layers), reversed(caches)):
        v_batch = lay.vjp_input_mat(theta, cache, v_batch)
    return v_batch


def seq_jvp(layers, theta, caches, dx, dtheta):
    for lay, cache in zip(layers, caches):
        dx = lay.jvp(theta, cache, dx, dtheta)
    return dx


def seq_db(layers, theta, caches, m, out, hook=None, path="", meter=None):
    for i, (lay, cache) in enumerate(zip(reversed(layers), reversed(caches))):
        lay_path = f"{path}{lay.label()}@{len(layers) - 1 - i}"
        m = lay.db_step(theta, cache, m, out, hook, lay_path, meter)
        if not np.all(np.isfinite(m)):
            raise NumericError(f"non-finite curvature message after {lay_path}")
        if meter is not None:
            meter.observe(m.nbytes + out.nbytes)
    return m


def seq_exact(layers, theta, caches, bigm, out, meter=None):
    for lay, cache in zip(reversed(layers), reversed(caches)):
        bigm = lay.exact_step(theta, cache, bigm, out, meter)
        if meter is not None:
            meter.observe(bigm.nbytes + out.nbytes)
    return bigm
