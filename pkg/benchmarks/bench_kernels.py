"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--points 65536] [--repeat 5]
"""

import argparse
import time

import numpy as np

from sasnet import _kernels


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=65536)
    ap.add_argument("--table", type=int, default=512)
    ap.add_argument("--image", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.USE_NUMBA:
        raise SystemExit("numba path disabled (SASNET_DISABLE_NUMBA set or numba missing)")

    rng = np.random.default_rng(0)
    table = rng.normal(size=(args.table, 2))
    idx = rng.integers(0, args.table, size=(args.points, 4))
    w = rng.uniform(size=(args.points, 4))
    g = rng.normal(size=(args.points, 2))
    z = rng.normal(scale=5.0, size=(args.points, 128))
    col = rng.integers(0, 9, size=128)
    masks = rng.uniform(size=(args.points, 9))
    mag = rng.uniform(size=(args.image, args.image))
    gx, gy = rng.normal(size=(2, args.image, args.image))

    cases = [
        ("sincos", lambda: np.stack(_kernels.sincos_numpy(z)), lambda: np.stack(_kernels.sincos_numba(z))),
        ("mul_columns", lambda: _kernels.mul_columns_numpy(z, masks, col),
         lambda: _kernels.mul_columns_numba(z, masks, col)),
        ("mul_columns_grad", lambda: np.hstack(_kernels.mul_columns_grad_numpy(z, z, masks, col)),
         lambda: np.hstack(_kernels.mul_columns_grad_numba(z, z, masks, col))),
        ("gather_interp", lambda: _kernels.gather_interp_numpy(table, idx, w),
         lambda: _kernels.gather_interp_numba(table, idx, w)),
        ("scatter_interp", lambda: _kernels.scatter_interp_numpy(g, idx, w, args.table),
         lambda: _kernels.scatter_interp_numba(g, idx, w, args.table)),
        ("nms", lambda: _kernels.nms_numpy(mag, gx, gy), lambda: _kernels.nms_numba(mag, gx, gy)),
    ]
    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb in cases:
        a, b = f_np(), f_nb()
        if not np.allclose(a, b, atol=1e-12):
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_np, t_nb = best_of(f_np, args.repeat), best_of(f_nb, args.repeat)
        print(f"{name:16s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
