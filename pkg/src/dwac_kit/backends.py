"""Hot numerical kernels with a numba fast path and a pure-numpy fallback.

Three operations dominate runtime everywhere in this package: pairwise
squared Euclidean distances, kernel-weight sums pooled per class, and the
leave-one-out batch loss with its gradient. Each has two interchangeable
implementations:

* ``numba``: ``@njit``-compiled loops, fused where it saves memory
  (the class-weight-sum kernel never materializes the query x reference
  weight matrix).
* ``numpy``: vectorized BLAS-backed expressions.

The active backend is chosen once at import from the ``DWAC_KIT_BACKEND``
environment variable (``auto`` | ``numba`` | ``numpy``; default ``auto``,
which prefers numba when importable) and can be switched at runtime with
:func:`set_backend`. Both paths are deterministic run-to-run; across
backends results agree to floating-point noise, not bit-for-bit, because
summation orders differ.

Run ``benchmarks/bench_backends.py`` to compare the two on your machine.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

ENV_VAR = "DWAC_KIT_BACKEND"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _np_pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ||a||^2 + ||b||^2 - 2 a.b, clamped: cancellation can leave tiny negatives
    # and downstream exp(-d^2) needs d^2 >= 0.
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    out = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ b.T)
    np.maximum(out, 0.0, out=out)
    return out


def _np_class_weight_sums(
    h_query: np.ndarray,
    h_ref: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    inv_two_sigma: float,
) -> np.ndarray:
    w = np.exp(-inv_two_sigma * _np_pairwise_sq(h_query, h_ref))
    onehot = np.zeros((h_ref.shape[0], num_classes))
    onehot[np.arange(h_ref.shape[0]), labels] = 1.0
    return w @ onehot


def _np_loo_loss_grad(
    h: np.ndarray,
    labels: np.ndarray,
    inv_two_sigma: float,
    prob_floor: float,
) -> tuple[float, np.ndarray]:
    b = h.shape[0]
    w = np.exp(-inv_two_sigma * _np_pairwise_sq(h, h))
    np.fill_diagonal(w, 0.0)
    same = (labels[:, None] == labels[None, :]).astype(np.float64)

    denom = w.sum(axis=1)
    numer = (w * same).sum(axis=1)
    safe = denom > 0.0
    p_raw = np.where(safe, numer / np.where(safe, denom, 1.0), 0.0)
    p = np.clip(p_raw, prob_floor, 1.0)
    loss = float(np.mean(-np.log(p)))

    # d(loss)/dP is zero wherever the floor clamp is active (or the row had
    # no kernel mass at all).
    g = np.where(p_raw > prob_floor, -1.0 / (b * p), 0.0)
    coeff = (g / np.where(safe, denom, 1.0))[:, None] * (same - p_raw[:, None]) * w
    m = coeff + coeff.T
    grad = 2.0 * inv_two_sigma * (m @ h - m.sum(axis=1)[:, None] * h)
    return loss, grad


_NUMPY_IMPLS = {
    "pairwise_sq": _np_pairwise_sq,
    "class_weight_sums": _np_class_weight_sums,
    "loo_loss_grad": _np_loo_loss_grad,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _nb_pairwise_sq(a, b):
        m_a, d = a.shape
        m_b = b.shape[0]
        sq_b = np.empty(m_b)
        for j in range(m_b):
            acc = 0.0
            for k in range(d):
                acc += b[j, k] * b[j, k]
            sq_b[j] = acc
        out = np.empty((m_a, m_b))
        for i in prange(m_a):
            sq_a = 0.0
            for k in range(d):
                sq_a += a[i, k] * a[i, k]
            for j in range(m_b):
                dot = 0.0
                for k in range(d):
                    dot += a[i, k] * b[j, k]
                v = sq_a + sq_b[j] - 2.0 * dot
                out[i, j] = v if v > 0.0 else 0.0
        return out

    @njit(cache=True, parallel=True)
    def _nb_class_weight_sums(h_query, h_ref, labels, num_classes, inv_two_sigma):
        q, d = h_query.shape
        t = h_ref.shape[0]
        out = np.zeros((q, num_classes))
        for i in prange(q):
            for j in range(t):
                acc = 0.0
                for k in range(d):
                    diff = h_query[i, k] - h_ref[j, k]
                    acc += diff * diff
                out[i, labels[j]] += np.exp(-inv_two_sigma * acc)
        return out

    @njit(cache=True)
    def _nb_loo_loss_grad(h, labels, inv_two_sigma, prob_floor):
        b, d = h.shape
        w = np.zeros((b, b))
        for j in range(b):
            for i in range(j + 1, b):
                acc = 0.0
                for k in range(d):
                    diff = h[j, k] - h[i, k]
                    acc += diff * diff
                v = np.exp(-inv_two_sigma * acc)
                w[j, i] = v
                w[i, j] = v

        denom = np.zeros(b)
        numer = np.zeros(b)
        for j in range(b):
            for i in range(b):
                if i != j:
                    denom[j] += w[j, i]
                    if labels[i] == labels[j]:
                        numer[j] += w[j, i]

        loss = 0.0
        g = np.zeros(b)
        p_raw = np.zeros(b)
        for j in range(b):
            if denom[j] > 0.0:
                p_raw[j] = numer[j] / denom[j]
            p = p_raw[j]
            if p < prob_floor:
                p = prob_floor
            elif p > 1.0:
                p = 1.0
            loss += -np.log(p) / b
            if p_raw[j] > prob_floor:
                g[j] = -1.0 / (b * p)

        grad = np.zeros((b, d))
        for j in range(b):
            if g[j] == 0.0:
                continue
            for i in range(b):
                if i == j:
                    continue
                same = 1.0 if labels[i] == labels[j] else 0.0
                c = g[j] * (same - p_raw[j]) / denom[j] * w[j, i]
                for k in range(d):
                    delta = 2.0 * inv_two_sigma * c * (h[i, k] - h[j, k])
                    grad[j, k] += delta
                    grad[i, k] -= delta
        return loss, grad

    _NUMBA_IMPLS = {
        "pairwise_sq": _nb_pairwise_sq,
        "class_weight_sums": _nb_class_weight_sums,
        "loo_loss_grad": _nb_loo_loss_grad,
    }
else:
    _NUMBA_IMPLS = None


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def available_backends() -> tuple[str, ...]:
    return ("numpy", "numba") if HAS_NUMBA else ("numpy",)


def _resolve(name: str) -> str:
    name = name.lower()
    if name == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    if name not in ("numpy", "numba"):
        raise ValueError(f"unknown backend {name!r}; expected auto, numba, or numpy")
    return name


def _resolve_env() -> str:
    raw = os.environ.get(ENV_VAR, "auto")
    try:
        return _resolve(raw)
    except ValueError:
        warnings.warn(f"{ENV_VAR}={raw!r} is not usable; falling back to numpy")
        return "numpy"


_ACTIVE = _resolve_env()


def active_backend() -> str:
    """Name of the backend currently serving the hot kernels."""
    return _ACTIVE


def set_backend(name: str) -> str:
    """Switch backend ('auto', 'numba', or 'numpy'); returns the previous name."""
    global _ACTIVE
    previous = _ACTIVE
    _ACTIVE = _resolve(name)
    return previous


def _impls():
    return _NUMBA_IMPLS if _ACTIVE == "numba" else _NUMPY_IMPLS


# ---------------------------------------------------------------------------
# dispatching wrappers (inputs must be float64 C-contiguous; labels int64)
# ---------------------------------------------------------------------------

def pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, (mA, d) x (mB, d) -> (mA, mB), clamped >= 0."""
    return _impls()["pairwise_sq"](a, b)


def class_weight_sums(
    h_query: np.ndarray,
    h_ref: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    inv_two_sigma: float,
) -> np.ndarray:
    """Per-class sums of exp(-d^2/(2 sigma)) over reference points, (q, c)."""
    return _impls()["class_weight_sums"](h_query, h_ref, labels, num_classes, inv_two_sigma)


def loo_loss_grad(
    h: np.ndarray,
    labels: np.ndarray,
    inv_two_sigma: float,
    prob_floor: float,
) -> tuple[float, np.ndarray]:
    """Leave-one-out log loss over a batch and its gradient w.r.t. the embeddings."""
    return _impls()["loo_loss_grad"](h, labels, inv_two_sigma, prob_floor)
