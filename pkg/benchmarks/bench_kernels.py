"""Time the compiled kernels against their pure-numpy twins.

Run from the repository root after installing the package:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 200,1000 --repeats 7

The first compiled call includes JIT compilation; a warm-up pass keeps
it out of the timings. Numbers are medians over --repeats runs.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from socrat import kernels


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _edit_case(rng: np.random.Generator, n_words: int):
    alphabet = list("abdeghikmnopstu")
    words = ["".join(rng.choice(alphabet, size=rng.integers(3, 9)))
             for _ in range(n_words)]
    codes, offsets = kernels.encode_vocabulary(words)
    query = kernels.encode_word("".join(rng.choice(alphabet, size=6)))
    return codes, offsets, query


def _newton_case(rng: np.random.Generator, rows: int):
    feats = 12
    X = (rng.random((rows, feats)) < 0.4).astype(np.float64)
    X[0, :] = 1.0
    y = (rng.random(rows) < 0.5).astype(np.float64)
    return X, y


def _local_case(rng: np.random.Generator, side: int):
    theta = rng.random((side, side))
    theta_hat = rng.random((side, side)) * 0.3
    k = 3
    u0 = np.arange(side, dtype=np.int64) % k
    v0 = (np.arange(side, dtype=np.int64) + 1) % k
    cmax = side  # loose bounds keep every move legal
    return theta, theta_hat, u0, v0, k, 1, cmax, 1, cmax, 2.5, 10000


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="100,400,1600",
                        help="comma-separated problem sizes")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    if not kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy path can run")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    for size in sizes:
        codes, offsets, query = _edit_case(rng, size)
        X, y = _newton_case(rng, size)
        ls = _local_case(rng, max(4, int(size ** 0.5)))

        cases = [
            ("edit_distance_scan", f"{size} words",
             lambda: kernels.edit_distance_scan_np(codes, offsets, query, 2),
             lambda: kernels.edit_distance_scan_nb(codes, offsets, query, 2)),
            ("newton_map", f"{size} rows",
             lambda: kernels.newton_map_np(X, y, 0.0, 1.0, 1e-8, 100),
             lambda: kernels.newton_map_nb(X, y, 0.0, 1.0, 1e-8, 100)),
            ("local_search", f"{ls[0].shape[0]}x{ls[0].shape[0]}",
             lambda: kernels.local_search_np(*ls),
             lambda: kernels.local_search_nb(*ls)),
        ]
        for name, label, np_fn, nb_fn in cases:
            nb_fn()  # warm-up: compile before timing
            t_np = _median_time(np_fn, args.repeats)
            t_nb = _median_time(nb_fn, args.repeats)
            rows.append((name, label, t_np, t_nb))

    print(f"{'kernel':<20} {'case':>12} {'numpy':>12} {'numba':>12} {'speedup':>8}")
    for name, label, t_np, t_nb in rows:
        ratio = t_np / t_nb if t_nb > 0 else float("inf")
        print(f"{name:<20} {label:>12} {t_np * 1e3:>10.3f}ms "
              f"{t_nb * 1e3:>10.3f}ms {ratio:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
