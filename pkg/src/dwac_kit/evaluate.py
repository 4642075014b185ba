"""Accuracy, adaptive-binning calibration error, and out-of-domain studies.

Calibration MAE pools all (instance, class) probability/indicator pairs,
sorts by predicted probability, and cuts equal-count bins so every bin is
equally well populated regardless of how probabilities cluster. The two
OOD protocols score credibility (max conformal p-value) on data the model
never saw the likes of: either a class held out of training entirely, or
a width-matched foreign dataset.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .conformal import calibrate, conformal_predict
from .data import Dataset, atomic_write_text, standardize_splits
from .heads import DEFAULT_SIGMA, EmbeddedTrainingSet, Predictions
from .linalg import make_rng, shuffle_split
from .network import DWAC, EmbeddingModel
from .trainer import TrainConfig, predict, train

SPLIT_STREAM = 2
HIST_BINS = 20


def accuracy(predictions, labels: np.ndarray) -> float:
    """Fraction of instances whose predicted label matches; accepts either a
    Predictions batch or a plain vector of predicted labels."""
    predicted = predictions.predicted if isinstance(predictions, Predictions) else predictions
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape:
        raise ValueError("predictions and labels must align")
    if predicted.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predicted == labels))


@dataclass(frozen=True)
class CalibrationBin:
    mean_predicted: float
    frequency: float
    count: int


@dataclass
class CalibrationMae:
    bins: list[CalibrationBin]
    mae: float

    @property
    def bin_count(self) -> int:
        return len(self.bins)


def calibration_mae(probs: np.ndarray, labels: np.ndarray, per_bin: int = 100) -> CalibrationMae:
    """Mean absolute calibration error with equal-count adaptive bins.

    All n*c (probability, is-true-class) pairs are pooled and sorted by
    probability; consecutive runs of ``per_bin`` pairs form bins (the last
    bin absorbs the remainder, and fewer than ``per_bin`` pairs total fall
    back to a single bin). mae averages |mean probability - frequency|
    over bins.
    """
    if per_bin < 10:
        raise ValueError(f"per_bin must be >= 10, got {per_bin}")
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError("probs must be (n, c) with aligned labels")
    if probs.size == 0:
        raise ValueError("calibration error of an empty set is undefined")
    n, c = probs.shape
    flat_p = probs.ravel()
    flat_hit = (labels[:, None] == np.arange(c)).ravel().astype(np.float64)
    order = np.argsort(flat_p, kind="stable")
    flat_p = flat_p[order]
    flat_hit = flat_hit[order]

    total = flat_p.size
    num_bins = max(1, total // per_bin)
    bins = []
    errors = np.empty(num_bins)
    for b in range(num_bins):
        lo = b * per_bin
        hi = (b + 1) * per_bin if b < num_bins - 1 else total
        mean_p = float(np.mean(flat_p[lo:hi]))
        freq = float(np.mean(flat_hit[lo:hi]))
        bins.append(CalibrationBin(mean_predicted=mean_p, frequency=freq, count=hi - lo))
        errors[b] = abs(mean_p - freq)
    return CalibrationMae(bins=bins, mae=float(np.mean(errors)))


def write_calibration_csv(result: CalibrationMae, path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["bin", "mean_predicted", "frequency", "count"])
    for i, b in enumerate(result.bins):
        writer.writerow([i, repr(b.mean_predicted), repr(b.frequency), b.count])
    atomic_write_text(path, buf.getvalue())


@dataclass
class OodReport:
    """Credibility samples for in-domain and out-of-domain data, with their
    means and matching 20-bin histograms on [0, 1]."""

    measure: str
    in_domain: np.ndarray
    out_of_domain: np.ndarray
    in_mean: float
    out_mean: float
    hist_edges: np.ndarray
    in_counts: np.ndarray
    out_counts: np.ndarray


def _ood_report(measure: str, in_cred: np.ndarray, out_cred: np.ndarray) -> OodReport:
    in_counts, edges = np.histogram(in_cred, bins=HIST_BINS, range=(0.0, 1.0))
    out_counts, _ = np.histogram(out_cred, bins=HIST_BINS, range=(0.0, 1.0))
    return OodReport(
        measure=measure,
        in_domain=in_cred,
        out_of_domain=out_cred,
        in_mean=float(np.mean(in_cred)),
        out_mean=float(np.mean(out_cred)),
        hist_edges=edges,
        in_counts=in_counts,
        out_counts=out_counts,
    )


def drop_class(dataset: Dataset, held_class: int) -> tuple[Dataset, Dataset]:
    """Split a dataset into (remaining with dense relabeling, held-out rows).

    Remaining labels are compacted to 0..c-2 in ascending original order so
    the trained head stays minimal.
    """
    if dataset.y is None:
        raise ValueError("hold-out protocol needs labels")
    if not 0 <= held_class < dataset.num_classes:
        raise ValueError(f"held_class {held_class} out of range 0..{dataset.num_classes - 1}")
    held_mask = dataset.y == held_class
    if not held_mask.any():
        raise ValueError(f"class {held_class} has no instances")
    remap = np.full(dataset.num_classes, -1, dtype=np.int64)
    kept = [k for k in range(dataset.num_classes) if k != held_class]
    for new, old in enumerate(kept):
        remap[old] = new
    remaining = Dataset(
        x=dataset.x[~held_mask],
        y=remap[dataset.y[~held_mask]],
        num_classes=dataset.num_classes - 1,
        feature_names=dataset.feature_names,
        stats=dataset.stats,
    )
    held = Dataset(
        x=dataset.x[held_mask],
        y=None,
        num_classes=dataset.num_classes - 1,
        feature_names=dataset.feature_names,
        stats=dataset.stats,
    )
    return remaining, held


def ood_holdout_class_multi(
    dataset: Dataset,
    held_class: int,
    config: TrainConfig,
    measures: list[str],
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> dict[str, OodReport]:
    """Hold-out protocol scored under several measures with one training run.

    The remaining classes are split proper/calibration/test with the config
    seed, the model is trained and conformally calibrated, and credibility
    is scored for the in-domain test split and every held-out instance.
    """
    if dataset.num_classes < 3:
        raise ValueError("hold-out protocol needs >= 3 classes so training stays multiclass")
    if not measures:
        raise ValueError("need at least one nonconformity measure")
    remaining, held = drop_class(dataset, held_class)
    parts = shuffle_split(len(remaining), fractions, make_rng(config.seed, SPLIT_STREAM))
    proper, calib, test = (remaining.subset(p) for p in parts)
    proper, calib, test, held = standardize_splits(proper, calib, test, held)

    result = train(proper, calib, config)
    calib_preds = predict(result.model, calib.x, train=result.embedded, sigma=config.sigma)
    in_preds = predict(result.model, test.x, train=result.embedded, sigma=config.sigma)
    out_preds = predict(result.model, held.x, train=result.embedded, sigma=config.sigma)

    reports = {}
    for measure in measures:
        calib_scores = calibrate(calib_preds, calib.y, measure)
        in_cred = conformal_predict(in_preds, calib_scores, measure).credibility()
        out_cred = conformal_predict(out_preds, calib_scores, measure).credibility()
        reports[measure] = _ood_report(measure, in_cred, out_cred)
    return reports


def ood_holdout_class(
    dataset: Dataset,
    held_class: int,
    config: TrainConfig,
    measure: str,
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
) -> OodReport:
    """Train without one class, then compare credibility on in-domain test
    data against the held-out class."""
    return ood_holdout_class_multi(dataset, held_class, config, [measure], fractions)[measure]


def ood_cross_dataset(
    model: EmbeddingModel,
    train_set: EmbeddedTrainingSet | None,
    calibration_scores: np.ndarray,
    measure: str,
    in_domain: Dataset,
    foreign: Dataset,
    sigma: float = DEFAULT_SIGMA,
) -> OodReport:
    """Credibility of a foreign dataset against an already-trained model,
    with an in-domain dataset as the reference distribution. The foreign
    data only has to match the encoded feature width."""
    if len(foreign) == 0:
        raise ValueError("foreign dataset is empty")
    if foreign.dim != in_domain.dim:
        raise ValueError(
            f"feature width mismatch: foreign {foreign.dim}, in-domain {in_domain.dim}"
        )
    if model.head == DWAC and train_set is None:
        raise ValueError("dwac model needs its embedded training set")
    in_preds = predict(model, in_domain.x, train=train_set, sigma=sigma)
    out_preds = predict(model, foreign.x, train=train_set, sigma=sigma)
    in_cred = conformal_predict(in_preds, calibration_scores, measure).credibility()
    out_cred = conformal_predict(out_preds, calibration_scores, measure).credibility()
    return _ood_report(measure, in_cred, out_cred)


def write_ood_histogram_csv(report: OodReport, path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["bin_low", "bin_high", "in_domain_count", "out_of_domain_count"])
    for i in range(report.hist_edges.size - 1):
        writer.writerow(
            [repr(float(report.hist_edges[i])), repr(float(report.hist_edges[i + 1])),
             int(report.in_counts[i]), int(report.out_counts[i])]
        )
    atomic_write_text(path, buf.getvalue())


def write_ood_summary_json(reports: dict[str, OodReport], path: str) -> None:
    doc = {
        name: {
            "measure": r.measure,
            "in_domain_mean": r.in_mean,
            "out_of_domain_mean": r.out_mean,
            "in_domain_n": int(r.in_domain.size),
            "out_of_domain_n": int(r.out_of_domain.size),
        }
        for name, r in sorted(reports.items())
    }
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True))
