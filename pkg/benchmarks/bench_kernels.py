"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run with:  python benchmarks/bench_kernels.py
The numba column disappears when numba is not importable (or CCN_NUMBA=0).
"""

import time

import numpy as np

from ccn import kernels


def _time(fn, *args, repeats=50):
    fn(*args)  # warm up (and trigger JIT compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _softmax_args(rows, cols, dtype):
    rng = np.random.default_rng(0)
    return (rng.normal(size=(rows, cols)).astype(dtype),)


def _softmax_bwd_args(rows, cols, dtype):
    rng = np.random.default_rng(3)
    y = kernels.NUMPY_IMPLS["softmax_rows_fwd"](rng.normal(size=(rows, cols)).astype(dtype))
    return (y, rng.normal(size=(rows, cols)).astype(dtype))


def _layer_norm_args(rows, cols, dtype):
    rng = np.random.default_rng(1)
    return (
        rng.normal(size=(rows, cols)).astype(dtype),
        np.ones(cols, dtype=dtype),
        np.zeros(cols, dtype=dtype),
        1e-5,
    )


def _layer_norm_bwd_args(rows, cols, dtype):
    rng = np.random.default_rng(4)
    x, gain, bias, eps = _layer_norm_args(rows, cols, dtype)
    _, xhat, inv_std = kernels.NUMPY_IMPLS["layer_norm_fwd"](x, gain, bias, eps)
    return (rng.normal(size=(rows, cols)).astype(dtype), xhat, inv_std, gain)


def _adam_args(rows, cols, dtype):
    rng = np.random.default_rng(2)
    n = rows * cols
    return (
        rng.normal(size=n).astype(dtype),
        rng.normal(size=n).astype(dtype),
        np.zeros(n, dtype=dtype),
        np.zeros(n, dtype=dtype),
        1e-3,
        0.9,
        0.98,
        1e-9,
        3,
    )


CASES = [
    ("softmax_rows_fwd", _softmax_args),
    ("softmax_rows_bwd", _softmax_bwd_args),
    ("layer_norm_fwd", _layer_norm_args),
    ("layer_norm_bwd", _layer_norm_bwd_args),
    ("adam_update", _adam_args),
]

SIZES = [(256, 64), (1024, 256), (4096, 512)]


def main():
    have_numba = bool(kernels.NUMBA_IMPLS)
    print(f"active backend: {kernels.active_backend()}")
    for name, kind in sorted(kernels.active_impls().items()):
        print(f"  {name}: {kind}")
    header = f"{'kernel':20s} {'shape':>12s} {'numpy ms':>10s}"
    if have_numba:
        header += f" {'numba ms':>10s} {'speedup':>8s}"
    print(header)
    for name, make_args in CASES:
        for rows, cols in SIZES:
            args = make_args(rows, cols, np.float32)
            t_np = _time(kernels.NUMPY_IMPLS[name], *args) * 1e3
            line = f"{name:20s} {f'{rows}x{cols}':>12s} {t_np:10.3f}"
            if have_numba:
                t_nb = _time(kernels.NUMBA_IMPLS[name], *args) * 1e3
                line += f" {t_nb:10.3f} {t_np / t_nb:8.2f}x"
            print(line)


if __name__ == "__main__":
    main()
