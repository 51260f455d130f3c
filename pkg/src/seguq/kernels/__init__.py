"""Backend selection for the hot convolution kernels.

The environment variable ``SEGUQ_BACKEND`` picks the implementation:

* ``numba`` - JIT-compiled loops (fails if numba is not installed)
* ``numpy`` - pure-numpy fallback
* ``auto``  - numba when importable, numpy otherwise (default)

Both backends implement the same functions with the same contracts; they
differ only in speed and in floating-point association order, so results
agree to rounding but are not bit-identical across backends.
"""

import os

from .. import errors

_ENV_VAR = "SEGUQ_BACKEND"
_active_name = None
_ops = None


def _load(name):
    if name == "numba":
        from . import _numba as mod
    elif name == "numpy":
        from . import _numpy as mod
    else:
        raise errors.ConfigError(f"unknown kernel backend {name!r}")
    return mod


def use_backend(name: str) -> str:
    """Select the kernel backend; returns the name actually activated."""
    global _active_name, _ops
    if name == "auto":
        try:
            _ops = _load("numba")
            _active_name = "numba"
        except ImportError:
            _ops = _load("numpy")
            _active_name = "numpy"
    else:
        _ops = _load(name)
        _active_name = name
    return _active_name


def active_backend() -> str:
    return _active_name


use_backend(os.environ.get(_ENV_VAR, "auto"))


def conv2d_forward(x, w, b):
    return _ops.conv2d_forward(x, w, b)


def conv2d_vjp_input(w, v):
    return _ops.conv2d_vjp_input(w, v)


def conv2d_vjp_weight(x, v, cout, kh, kw):
    return _ops.conv2d_vjp_weight(x, v, cout, kh, kw)


def conv2d_vjp_input_batch(w, v_batch):
    return _ops.conv2d_vjp_input_batch(w, v_batch)
