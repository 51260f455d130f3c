"""Curvature scaling benchmark.

Times the diagonal backpropagation against the exact full-message oracle on
a fixed small conv net at growing image sizes, and reports per-pixel-doubling
growth ratios for wall time and peak auxiliary memory.  Auxiliary memory is
accounted analytically (bytes of live message/work buffers at each step of
the recursion), which is allocator-independent and reproducible.

Also times the diagonal pass under every available kernel backend so the
numba/numpy trade-off is visible in one table.
"""

from __future__ import annotations

import time

import numpy as np

from . import kernels
from .curvature import MemMeter, bce_logit_hessian, db_diag, ggn_diag_exact
from .layers import Conv2d, ReLU
from .network import Network


def _bench_net(size, seed=0):
    # single-channel conv chain keeps the exact oracle's dense messages at
    # size^2 x size^2, the smallest honest quadratic footprint
    layers = [Conv2d(1, 1), ReLU(), Conv2d(1, 1), ReLU(), Conv2d(1, 1)]
    return Network(layers, (1, size, size), seed=seed)


def _timed(fn, reps):
    best = np.inf
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _per_doubling(v_small, v_large, doublings):
    return float((v_large / v_small) ** (1.0 / doublings))


def run_bench(sizes=(16, 32, 64), reps_db=30, reps_exact=3, seed=0,
              compare_backends=True):
    rows = []
    rng = np.random.default_rng(seed)
    available = [kernels.active_backend()]
    if compare_backends:
        for name in ("numba", "numpy"):
            if name not in available:
                try:
                    kernels.use_backend(name)
                    available.append(name)
                except ImportError:
                    pass
        kernels.use_backend(available[0])
    primary = available[0]
    for size in sizes:
        net = _bench_net(size, seed)
        x = rng.random((1, size, size))
        loss_h = bce_logit_hessian(rng.uniform(0.2, 0.8, net.out_size))
        row = {"size": size, "pixels": size * size, "db_time": {},
               "backend": primary}
        db_diag(net, x, loss_h)  # warm up JIT outside the timer
        for name in available:
            kernels.use_backend(name)
            db_diag(net, x, loss_h)
            row["db_time"][name] = _timed(lambda: db_diag(net, x, loss_h),
                                          reps_db)
        kernels.use_backend(primary)
        meter = MemMeter()
        db_diag(net, x, loss_h, meter=meter)
        row["db_mem"] = meter.peak
        meter = MemMeter()
        row["exact_time"] = _timed(
            lambda: ggn_diag_exact(net, x, loss_h), reps_exact)
        ggn_diag_exact(net, x, loss_h, meter=meter)
        row["exact_mem"] = meter.peak
        rows.append(row)
    first, last = rows[0], rows[-1]
    doublings = np.log2(last["pixels"] / first["pixels"])
    ratios = {
        "doublings": float(doublings),
        "db_time_per_doubling": _per_doubling(
            first["db_time"][primary], last["db_time"][primary], doublings),
        "db_mem_per_doubling": _per_doubling(
            first["db_mem"], last["db_mem"], doublings),
        "exact_time_per_doubling": _per_doubling(
            first["exact_time"], last["exact_time"], doublings),
        "exact_mem_per_doubling": _per_doubling(
            first["exact_mem"], last["exact_mem"], doublings),
    }
    return {"rows": rows, "ratios": ratios, "backends": available,
            "primary_backend": primary}


def format_bench(result) -> str:
    lines = ["size  pixels  " + "  ".join(
        f"db[{b}]" for b in result["backends"])
        + "  db_mem  exact_time  exact_mem"]
    for row in result["rows"]:
        times = "  ".join(f"{row['db_time'][b] * 1e3:9.3f}ms"
                          for b in result["backends"])
        lines.append(
            f"{row['size']:4d}  {row['pixels']:6d}  {times}  "
            f"{row['db_mem']:8d}B  {row['exact_time'] * 1e3:9.3f}ms  "
            f"{row['exact_mem']:10d}B")
    r = result["ratios"]
    lines.append(
        f"per 2x pixel doubling: db time x{r['db_time_per_doubling']:.2f}, "
        f"db mem x{r['db_mem_per_doubling']:.2f}, "
        f"exact time x{r['exact_time_per_doubling']:.2f}, "
        f"exact mem x{r['exact_mem_per_doubling']:.2f}")
    return "\n".join(lines)
