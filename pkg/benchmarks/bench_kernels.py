"""Compare the numba and numpy paths of the voting/metrics kernels.

    python benchmarks/bench_kernels.py [--repeat 20]

Sizes cover one test split of the reference dataset (3,097 images,
15 classes, 3 members) and a larger synthetic batch. The numba timings
exclude JIT compilation (one untimed call first).
"""

import argparse
import time

import numpy as np

from leafvote import _accel

KERNELS = {
    "weighted_vote": (_accel.weighted_vote_numba, _accel.weighted_vote_numpy),
    "argmax_rows": (_accel.argmax_rows_numba, _accel.argmax_rows_numpy),
    "confusion_counts": (_accel.confusion_counts_numba, _accel.confusion_counts_numpy),
}


def inputs(name, n, c, m, rng):
    if name == "weighted_vote":
        stack = rng.random((m, n, c))
        return stack / stack.sum(axis=2, keepdims=True), rng.random(m) + 0.1
    if name == "argmax_rows":
        return (rng.random((n, c)),)
    return rng.integers(0, c, n), rng.integers(0, c, n), c


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'N':>8s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for n in (3_097, 200_000):
        for name, (nb, np_) in KERNELS.items():
            a = inputs(name, n, 15, 3, rng)
            t_nb = best_of(nb, a, args.repeat)
            t_np = best_of(np_, a, args.repeat)
            assert np.allclose(nb(*a), np_(*a))
            print(f"{name:18s} {n:8d} {1e6 * t_nb:10.1f} {1e6 * t_np:10.1f} {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
