"""Compare the numba and numpy backends on the three hot kernels.

Runs each kernel at a few realistic shapes under both backends, checks the
outputs agree, and prints a table with the median wall time and the
numba speedup. A short end-to-end training run is included because kernel
microbenchmarks flatter numba (no allocator pressure, hot caches).

Usage:
    python3 benchmarks/bench_backends.py [--repeats N] [--quick]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from dwac_kit import TrainConfig, available_backends, make_blobs, make_rng, set_backend, train
from dwac_kit.backends import class_weight_sums, loo_loss_grad, pairwise_sq
from dwac_kit.data import standardize_splits
from dwac_kit.linalg import shuffle_split


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up; for numba this also absorbs JIT compilation
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def _kernel_cases(quick: bool):
    rng = make_rng(0, 42)
    sizes = [(500, 500), (2000, 2000)] if quick else [(500, 500), (2000, 2000), (5000, 5000)]
    cases = []
    for q, t in sizes:
        a = rng.standard_normal((q, 8))
        b = rng.standard_normal((t, 8))
        labels = rng.integers(0, 4, size=t)
        cases.append((f"pairwise_sq      {q}x{t}x8", lambda a=a, b=b: pairwise_sq(a, b)))
        cases.append((
            f"class_weight_sums {q}x{t}x8 c=4",
            lambda a=a, b=b, l=labels: class_weight_sums(a, b, l, 4, 1.0),
        ))
    for batch in (128, 512):
        h = rng.standard_normal((batch, 4))
        y = rng.integers(0, 4, size=batch)
        cases.append((
            f"loo_loss_grad    B={batch} d=4",
            lambda h=h, y=y: loo_loss_grad(h, y, 1.0, 1e-12),
        ))
    return cases


def _train_once() -> None:
    blobs = make_blobs(2000, 4, 8, 10.0, make_rng(0, 3))
    parts = shuffle_split(len(blobs), (0.75, 0.25), make_rng(0, 2))
    proper, calib = standardize_splits(*(blobs.subset(p) for p in parts))
    train(proper, calib, TrainConfig(head="dwac", max_epochs=15, patience=15))


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5, help="timed runs per case (median)")
    parser.add_argument("--quick", action="store_true", help="skip the largest shapes")
    args = parser.parse_args()

    if "numba" not in available_backends():
        print("numba is not importable; nothing to compare")
        return 1

    cases = _kernel_cases(args.quick)
    cases.append(("train 1500x8 blobs, 15 epochs", _train_once))

    rows = []
    for name, fn in cases:
        timings = {}
        results = {}
        for backend in ("numpy", "numba"):
            set_backend(backend)
            timings[backend] = _median_time(fn, args.repeats)
            out = fn()
            if out is not None:
                results[backend] = out
        if len(results) == 2:
            a, b = results["numpy"], results["numba"]
            pair = (a, b) if isinstance(a, np.ndarray) else (a[1], b[1])
            gap = float(np.max(np.abs(pair[0] - pair[1])))
            if gap > 1e-9:
                print(f"warning: backends disagree on {name}: max abs diff {gap:.3e}")
        rows.append((name, timings["numpy"], timings["numba"]))

    width = max(len(r[0]) for r in rows)
    print(f"{'case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<{width}}  {t_np * 1e3:>8.2f}ms  {t_nb * 1e3:>8.2f}ms  {t_np / t_nb:>7.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
