"""Compare the numba and pure-numpy kernels on the same inputs.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from adatile import kernels
from adatile._accel import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def random_boxes(n, rng):
    xy = rng.uniform(0, 1000, (n, 2))
    wh = rng.uniform(10, 40, (n, 2))
    return np.hstack([xy, xy + wh])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; only the numpy column is meaningful")
    rng = np.random.default_rng(0)
    cases = []
    for n in (200, 1000, 3000):
        boxes = random_boxes(n, rng)
        for name, strat in (("iou", kernels.STRATEGY_IOU), ("one_way", kernels.STRATEGY_ONE_WAY)):
            cases.append((f"match_pairs {name} n={n}",
                          lambda b=boxes, s=strat: kernels._match_pairs_jit(b, s, 0.5),
                          lambda b=boxes, s=strat: kernels._match_pairs_numpy(b, s, 0.5)))
    for side in (400, 1000):
        img = rng.integers(0, 256, (side, side, 3), dtype=np.uint8)
        cases.append((f"resize {side}->192",
                       lambda im=img: kernels._resize_jit(im, 192, 192),
                       lambda im=img: kernels._resize_numpy(im, 192, 192)))
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for label, jit_fn, np_fn in cases:
        jit_fn()  # compile outside the timing loop
        tj, tn = best_of(jit_fn, args.repeat), best_of(np_fn, args.repeat)
        print(f"{label:<28}{tj * 1e3:>10.2f}{tn * 1e3:>10.2f}{tn / tj:>8.1f}x")


if __name__ == "__main__":
    main()
