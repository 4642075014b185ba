"""Output heads: softmax and the kernel-weighted averaging head.

The weighted-averaging head predicts class probabilities as a normalized
sum of Gaussian kernel weights over embedded training instances:

    P(y = k | x) = sum_i 1[y_i = k] w(h, h_i) / sum_j w(h, h_j)

with w(h, h_i) = exp(-||h - h_i||^2 / (2 sigma)) and sigma fixed at 1/2
by default, so the embedding network adapts to the distance scale rather
than the bandwidth being tuned.

During training the probabilities are approximated within each minibatch:
each instance's probability is estimated from the *other* batch members
(leave-one-out), which is why batches must have at least two rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import backends
from .linalg import as_matrix, pairwise_sq_distances

DEFAULT_SIGMA = 0.5
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class EmbeddedTrainingSet:
    """Embeddings and labels of the proper training set.

    This is the whole prediction substrate for the averaging head: after
    training only these low-dimensional vectors need to be stored.
    """

    h: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        h = as_matrix(self.h, "embeddings")
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != h.shape[0]:
            raise ValueError("labels must be a vector with one entry per embedding row")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels out of range 0..num_classes-1")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.h.shape[0]


@dataclass
class Predictions:
    """Batched prediction results.

    ``probs`` rows live on the simplex; ``predicted`` is the argmax with
    ties broken toward the lowest class index. The averaging head also
    carries the unnormalized per-class kernel weight sums and a flag for
    degenerate rows, where the total kernel mass underflowed to zero and
    the probabilities fell back to uniform.
    """

    probs: np.ndarray
    predicted: np.ndarray
    weight_sums: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __len__(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]


def kernel_weights(
    h_query: np.ndarray, h_ref: np.ndarray, sigma: float = DEFAULT_SIGMA
) -> np.ndarray:
    """Gaussian kernel weights exp(-d^2 / (2 sigma)); entries in (0, 1]."""
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    d2 = pairwise_sq_distances(h_query, h_ref)
    return np.exp(-d2 / (2.0 * sigma))


def dwac_predict(
    h_query: np.ndarray,
    train: EmbeddedTrainingSet,
    sigma: float = DEFAULT_SIGMA,
) -> Predictions:
    """Predict by kernel-weighted averaging over the embedded training set."""
    if len(train) == 0:
        raise ValueError("embedded training set is empty")
    if sigma <= 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    h_query = as_matrix(h_query, "h_query")
    if h_query.shape[1] != train.h.shape[1]:
        raise ValueError(
            f"query dim {h_query.shape[1]} != training dim {train.h.shape[1]}"
        )
    sums = backends.class_weight_sums(
        h_query, train.h, train.labels, train.num_classes, 1.0 / (2.0 * sigma)
    )
    total = sums.sum(axis=1)
    degenerate = total == 0.0
    safe_total = np.where(degenerate, 1.0, total)
    probs = sums / safe_total[:, None]
    if degenerate.any():
        probs[degenerate] = 1.0 / train.num_classes
    return Predictions(
        probs=probs,
        predicted=np.argmax(probs, axis=1).astype(np.int64),
        weight_sums=sums,
        degenerate=degenerate,
    )


def softmax_predict(logits: np.ndarray) -> Predictions:
    """Row-wise stable softmax over class logits."""
    logits = as_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return Predictions(probs=probs, predicted=np.argmax(probs, axis=1).astype(np.int64))


def dwac_batch_loss(
    h_batch: np.ndarray,
    labels_batch: np.ndarray,
    num_classes: int,
    sigma: float = DEFAULT_SIGMA,
    prob_floor: float = PROB_FLOOR,
) -> tuple[float, np.ndarray]:
    """Leave-one-out batch loss for the averaging head, with gradient.

    Each instance's probability of its own label is estimated from the
    other batch members. Probabilities are clamped to [prob_floor, 1]
    before the log so a batch with zero same-class kernel mass stays
    finite; the gradient is zero wherever the clamp is active. Returns the
    mean negative log probability and dLoss/dH.
    """
    h_batch = as_matrix(h_batch, "h_batch")
    b = h_batch.shape[0]
    if b < 2:
        raise ValueError("leave-one-out loss needs a batch of at least 2")
    labels = np.ascontiguousarray(labels_batch, dtype=np.int64)
    if labels.shape != (b,):
        raise ValueError("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels out of range 0..num_classes-1")
    return backends.loo_loss_grad(h_batch, labels, 1.0 / (2.0 * sigma), prob_floor)


def softmax_batch_loss(
    logits: np.ndarray, labels_batch: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log probability of the true label; gradient is
    (softmax - onehot) / B."""
    logits = as_matrix(logits, "logits")
    b, c = logits.shape
    labels = np.ascontiguousarray(labels_batch, dtype=np.int64)
    if labels.shape != (b,):
        raise ValueError("labels must be a vector matching the batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels out of range for logit width")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = float(-log_probs[np.arange(b), labels].mean())

    grad = np.exp(log_probs)
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return loss, grad
