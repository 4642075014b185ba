"""Seeded randomness, data splits, and the pairwise distance primitive.

All arrays are float64 and row-major. Randomness comes exclusively from
counter-based Philox generators so that a seed fixes every draw sequence
across runs and platforms; the platform-default bit generator is never
used.
"""

from __future__ import annotations

import numpy as np

from . import backends


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for a (seed, stream) pair.

    Distinct streams of the same seed are statistically independent, which
    is how parallel or multi-phase code derives child generators without
    sharing state.
    """
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))
    )


def as_matrix(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate and coerce to a finite float64 C-contiguous 2-d array."""
    out = np.ascontiguousarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def pairwise_sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All squared Euclidean distances between rows of ``a`` and rows of ``b``.

    Entry (i, j) is ``sum_k (a[i,k] - b[j,k])**2``, computed via the
    norm-expansion trick and clamped at zero. When ``a`` and ``b`` are the
    same array the diagonal is forced to exactly zero.
    """
    same_object = a is b
    a2 = as_matrix(a, "a")
    b2 = a2 if same_object else as_matrix(b, "b")
    if a2.shape[1] != b2.shape[1]:
        raise ValueError(
            f"column mismatch: a has {a2.shape[1]} columns, b has {b2.shape[1]}"
        )
    out = backends.pairwise_sq(a2, b2)
    if same_object:
        np.fill_diagonal(out, 0.0)
    return out


def shuffle_split(
    n: int, fractions: list[float] | tuple[float, ...], rng: np.random.Generator
) -> list[np.ndarray]:
    """Split indices 0..n-1 into disjoint shuffled parts sized by ``fractions``.

    Fractions must be positive and sum to 1. Part i gets floor(n * f_i)
    indices; the last part absorbs the remainder. Deterministic given the
    generator state.
    """
    fractions = list(fractions)
    if not fractions:
        raise ValueError("fractions must be nonempty")
    if any(f <= 0.0 for f in fractions):
        raise ValueError("every fraction must be > 0")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    if n < len(fractions):
        raise ValueError(f"cannot split {n} items into {len(fractions)} parts")

    perm = rng.permutation(n)
    sizes = [int(np.floor(n * f)) for f in fractions[:-1]]
    sizes.append(n - sum(sizes))
    parts = []
    start = 0
    for size in sizes:
        parts.append(perm[start : start + size])
        start += size
    return parts


def gaussian_sample(
    rows: int, cols: int, scale: float, rng: np.random.Generator
) -> np.ndarray:
    """I.i.d. zero-mean normal draws with standard deviation ``scale``."""
    if scale <= 0.0:
        raise ValueError(f"scale must be > 0, got {scale}")
    return rng.standard_normal((rows, cols)) * scale
