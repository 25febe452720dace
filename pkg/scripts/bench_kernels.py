#!/usr/bin/env python3
"""Time the compiled kernels against the NumPy fallback.

Run from a checkout with the extension built:

    python3 scripts/bench_kernels.py [--sizes 16,64,256] [--repeats 2000]
"""

import argparse
import timeit

import numpy as np

import mcas._core_py as pure

try:
    import mcas._core_c as compiled
except ImportError:
    compiled = None


def _random_model(rng, S, A, O):
    T = rng.random((S, A, S))
    T /= T.sum(axis=2, keepdims=True)
    Z = rng.random((A, S, O))
    Z /= Z.sum(axis=2, keepdims=True)
    b = rng.random(S)
    b /= b.sum()
    return T, Z, b


def bench(sizes, repeats):
    rng = np.random.default_rng(0)
    header = f"{'kernel':16s} {'S':>5s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for S in sizes:
        A, O, K = 8, max(2, S // 8), 64
        T, Z, b = _random_model(rng, S, A, O)
        alphas = rng.random((K, S))
        mat = rng.random((min(64, 4 * S), S))
        out = np.empty(S)
        obs_out = np.empty(O)
        cases = (
            ("belief_update", lambda m: m.belief_update(T, Z, b, 3, 1, out)),
            ("obs_likelihoods", lambda m: m.obs_likelihoods(T, Z, b, 3, obs_out)),
            ("best_alpha", lambda m: m.best_alpha(alphas, b)),
            ("l1_nearest", lambda m: m.l1_nearest(mat, b)),
            ("l1_closest_pair", lambda m: m.l1_closest_pair(mat)),
            ("conflate_rows", lambda m: m.conflate_rows(mat[:8], out)),
        )
        for name, call in cases:
            t_py = timeit.timeit(lambda: call(pure), number=repeats) / repeats
            if compiled is None:
                print(f"{name:16s} {S:5d} {t_py * 1e6:9.2f}u {'-':>10s} {'-':>8s}")
                continue
            t_c = timeit.timeit(lambda: call(compiled), number=repeats) / repeats
            print(
                f"{name:16s} {S:5d} {t_py * 1e6:9.2f}u {t_c * 1e6:9.2f}u "
                f"{t_py / t_c:7.1f}x"
            )
        print()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="16,64,256")
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()
    if compiled is None:
        print("compiled backend unavailable; timing the fallback only\n")
    bench([int(s) for s in args.sizes.split(",")], args.repeats)


if __name__ == "__main__":
    main()
