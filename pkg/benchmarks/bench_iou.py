"""Benchmark the rotated-rectangle overlap kernel: numba vs reference numpy.

Times the same random box pairs through both backends and checks they agree
to machine precision. Run from the repository root:

    python3 benchmarks/bench_iou.py --pairs 20000
"""

import argparse
import math
import time

import numpy as np

from trajsot import _rect_clip
from trajsot.geometry import Box3D, bev_corners


def random_pairs(n, seed=0):
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        a = Box3D(
            rng.uniform(-10, 10), rng.uniform(-10, 10), 0.0,
            rng.uniform(0.5, 3), rng.uniform(0.5, 3), rng.uniform(0.5, 5),
            rng.uniform(-math.pi, math.pi),
        )
        b = Box3D(
            a.x + rng.normal(0, 1.0), a.y + rng.normal(0, 1.0), 0.0,
            a.h, max(a.w + rng.normal(0, 0.3), 0.3), max(a.l + rng.normal(0, 0.4), 0.3),
            a.theta + rng.normal(0, 0.7),
        )
        pairs.append((bev_corners(a), bev_corners(b)))
    return pairs


def time_backend(fn, pairs):
    start = time.perf_counter()
    out = [fn(ca, cb) for ca, cb in pairs]
    return time.perf_counter() - start, np.array(out)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=20000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    pairs = random_pairs(args.pairs, args.seed)

    try:
        from trajsot import _rect_clip_numba
    except ImportError:
        print("numba backend unavailable; timing reference backend only")
    else:
        _rect_clip_numba.rect_intersection_area(*pairs[0])  # trigger JIT compile

    t_ref, out_ref = time_backend(_rect_clip.rect_intersection_area, pairs)
    print(f"numpy reference: {t_ref:.3f} s  ({args.pairs / t_ref:,.0f} pairs/s)")

    try:
        from trajsot import _rect_clip_numba
    except ImportError:
        return
    t_jit, out_jit = time_backend(_rect_clip_numba.rect_intersection_area, pairs)
    print(f"numba kernel:    {t_jit:.3f} s  ({args.pairs / t_jit:,.0f} pairs/s)")
    print(f"speedup:         {t_ref / t_jit:.1f}x")
    print(f"max |difference|: {np.abs(out_ref - out_jit).max():.2e}")


if __name__ == "__main__":
    main()
