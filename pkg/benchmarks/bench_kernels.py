"""Compiled vs numpy im2col/col2im, plus one conv forward/backward.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from binscene.numerics import _im2col_py

try:
    from binscene.numerics import _kernels
except ImportError:
    _kernels = None

# (name, N, C, H, W, k, stride, dilation): shapes the model actually hits
CASES = [
    ("enc1 4x4/2", 16, 1, 259, 99, 4, 2, 1),
    ("enc3 4x4/2", 16, 32, 66, 26, 4, 2, 1),
    ("aspp 3x3 d6", 8, 128, 28, 18, 3, 1, 6),
    ("s3r up 4x4/2", 8, 8, 258, 98, 4, 2, 1),
]


def _out(n, k, s, d):
    return (n - d * (k - 1) - 1) // s + 1


def bench(impl, repeat):
    rows = []
    for name, n, c, h, w, k, s, d in CASES:
        x = np.random.default_rng(0).standard_normal((n, c, h, w)).astype(np.float32)
        oh, ow = _out(h, k, s, d), _out(w, k, s, d)
        cols = impl.im2col(x, k, k, s, s, d, d, oh, ow)
        t_fwd = min(timeit.repeat(lambda: impl.im2col(x, k, k, s, s, d, d, oh, ow),
                                  number=1, repeat=repeat))
        t_bwd = min(timeit.repeat(lambda: impl.col2im(cols, n, c, h, w, k, k, s, s, d, d, oh, ow),
                                  number=1, repeat=repeat))
        rows.append((name, t_fwd, t_bwd))
    return rows


def check_agreement():
    for name, n, c, h, w, k, s, d in CASES:
        x = np.random.default_rng(1).standard_normal((n, c, h, w))
        oh, ow = _out(h, k, s, d), _out(w, k, s, d)
        a = _im2col_py.im2col(x, k, k, s, s, d, d, oh, ow)
        b = _kernels.im2col(x, k, k, s, s, d, d, oh, ow)
        assert np.array_equal(a, b), name
        ga = _im2col_py.col2im(a, n, c, h, w, k, k, s, s, d, d, oh, ow)
        gb = _kernels.col2im(a, n, c, h, w, k, k, s, s, d, d, oh, ow)
        assert np.allclose(ga, gb, atol=1e-10), name


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    py = bench(_im2col_py, args.repeat)
    if _kernels is None:
        print("compiled extension not built; numpy timings only")
        for name, f, b in py:
            print(f"{name:14s} im2col {f * 1e3:8.2f} ms  col2im {b * 1e3:8.2f} ms")
        return
    check_agreement()
    cy = bench(_kernels, args.repeat)
    print(f"{'case':14s} {'im2col py':>10s} {'cython':>8s} {'x':>6s}   {'col2im py':>10s} {'cython':>8s} {'x':>6s}")
    for (name, pf, pb), (_, cf, cb) in zip(py, cy):
        print(f"{name:14s} {pf * 1e3:8.2f}ms {cf * 1e3:6.2f}ms {pf / cf:5.1f}x   "
              f"{pb * 1e3:8.2f}ms {cb * 1e3:6.2f}ms {pb / cb:5.1f}x")


if __name__ == "__main__":
    main()
