"""Dataset ingestion, preprocessing, synthetic blobs, and model artifacts.

CSV files must carry a header row; a JSON schema assigns each column a
role (label | continuous | categorical | drop) and fixes the label
vocabulary. Continuous columns are z-scored with statistics fitted on
training data only; categorical columns become indicator blocks with a
trailing unknown-category slot so unseen values at prediction time encode
instead of crashing. Missing continuous values are rejected outright;
silent imputation would corrupt reproductions.

Model artifacts are single JSON documents (format ``dwac-kit/1``) whose
numeric arrays are serialized as decimal strings that round-trip float64
exactly, so save/load reproduces predictions bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .heads import EmbeddedTrainingSet
from .linalg import as_matrix
from .network import DWAC, EmbeddingModel, MlpSpec

FORMAT_VERSION = "dwac-kit/1"

ROLE_LABEL = "label"
ROLE_CONTINUOUS = "continuous"
ROLE_CATEGORICAL = "categorical"
ROLE_DROP = "drop"
ROLES = (ROLE_LABEL, ROLE_CONTINUOUS, ROLE_CATEGORICAL, ROLE_DROP)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r} for column {self.name!r}")


@dataclass(frozen=True)
class Schema:
    """Column roles plus the ordered label vocabulary."""

    columns: tuple[ColumnSpec, ...]
    label_values: tuple[str, ...]

    def __post_init__(self):
        labels = [c for c in self.columns if c.role == ROLE_LABEL]
        if len(labels) != 1:
            raise ValueError(f"schema needs exactly one label column, found {len(labels)}")
        features = [c for c in self.columns if c.role in (ROLE_CONTINUOUS, ROLE_CATEGORICAL)]
        if not features:
            raise ValueError("schema needs at least one feature column")
        if len(self.label_values) < 1:
            raise ValueError("label_values must be nonempty")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")

    @property
    def label_column(self) -> str:
        return next(c.name for c in self.columns if c.role == ROLE_LABEL)

    @property
    def feature_columns(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.role in (ROLE_CONTINUOUS, ROLE_CATEGORICAL))

    @property
    def num_classes(self) -> int:
        return len(self.label_values)

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Schema":
        columns = tuple(ColumnSpec(c["name"], c["role"]) for c in obj["columns"])
        return cls(columns=columns, label_values=tuple(obj["label_values"]))

    @classmethod
    def from_file(cls, path: str) -> "Schema":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json_dict(json.load(f))

    def to_json_dict(self) -> dict:
        return {
            "columns": [{"name": c.name, "role": c.role} for c in self.columns],
            "label_values": list(self.label_values),
        }


@dataclass(frozen=True)
class FeatureStats:
    """Fitted preprocessing state: z-score moments and category vocabularies."""

    means: dict[str, float]
    stds: dict[str, float]
    vocabs: dict[str, tuple[str, ...]]


@dataclass
class Dataset:
    """Encoded feature matrix with labels and preprocessing provenance."""

    x: np.ndarray
    y: np.ndarray | None
    num_classes: int
    feature_names: tuple[str, ...]
    stats: FeatureStats | None = None

    def __post_init__(self):
        self.x = as_matrix(self.x, "features")
        if self.y is not None:
            self.y = np.ascontiguousarray(self.y, dtype=np.int64)
            if self.y.shape != (self.x.shape[0],):
                raise ValueError("labels must align with feature rows")
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
                raise ValueError("labels out of range 0..num_classes-1")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            x=self.x[indices],
            y=None if self.y is None else self.y[indices],
            num_classes=self.num_classes,
            feature_names=self.feature_names,
            stats=self.stats,
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def read_csv_rows(path: str, schema: Schema) -> tuple[list[dict[str, str]], bool]:
    """Parse a headered CSV into per-row dicts of stripped cells.

    Returns (rows, has_labels). The file must contain every schema column
    except that the label column may be absent (unlabeled data); columns
    not named in the schema are rejected.
    """
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        known = {c.name for c in schema.columns}
        extra = [h for h in header if h not in known]
        if extra:
            raise ValueError(f"{path}: columns not in schema: {extra}")
        required = {c.name for c in schema.columns if c.role != ROLE_LABEL}
        missing = required - set(header)
        if missing:
            raise ValueError(f"{path}: schema columns missing from file: {sorted(missing)}")
        has_labels = schema.label_column in header

        rows = []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise ValueError(
                    f"{path}: row {line_no} has {len(record)} cells, header has {len(header)}"
                )
            rows.append({name: cell.strip() for name, cell in zip(header, record)})
    return rows, has_labels


def fit_stats(rows: list[dict[str, str]], schema: Schema, path: str = "<rows>") -> FeatureStats:
    """Fit z-score moments and sorted category vocabularies on training rows."""
    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    vocabs: dict[str, tuple[str, ...]] = {}
    for col in schema.feature_columns:
        if col.role == ROLE_CONTINUOUS:
            values = _parse_continuous_column(rows, col.name, path)
            mean = float(np.mean(values)) if len(values) else 0.0
            std = float(np.std(values)) if len(values) else 1.0
            means[col.name] = mean
            stds[col.name] = std if std > 0.0 else 1.0
        else:
            vocabs[col.name] = tuple(sorted({r[col.name] for r in rows}))
    return FeatureStats(means=means, stds=stds, vocabs=vocabs)


def _parse_continuous_column(rows, name, path):
    values = np.empty(len(rows))
    for i, row in enumerate(rows):
        cell = row[name]
        if cell == "":
            raise ValueError(f"{path}: row {i + 2}, column {name!r}: missing continuous value")
        try:
            values[i] = float(cell)
        except ValueError:
            raise ValueError(
                f"{path}: row {i + 2}, column {name!r}: cannot parse {cell!r} as a number"
            ) from None
    return values


def encode_rows(
    rows: list[dict[str, str]],
    schema: Schema,
    stats: FeatureStats,
    has_labels: bool = True,
    path: str = "<rows>",
) -> Dataset:
    """Encode parsed rows into a Dataset with the given fitted stats.

    Feature width is sum(|vocab| + 1) over categoricals plus the number of
    continuous columns; the +1 is the unknown-category slot, which is what
    unseen values fall into at prediction time.
    """
    names: list[str] = []
    blocks: list[np.ndarray] = []
    n = len(rows)
    for col in schema.feature_columns:
        if col.role == ROLE_CONTINUOUS:
            values = _parse_continuous_column(rows, col.name, path)
            blocks.append(((values - stats.means[col.name]) / stats.stds[col.name])[:, None])
            names.append(col.name)
        else:
            vocab = stats.vocabs[col.name]
            index = {v: i for i, v in enumerate(vocab)}
            width = len(vocab) + 1
            block = np.zeros((n, width))
            for i, row in enumerate(rows):
                block[i, index.get(row[col.name], width - 1)] = 1.0
            blocks.append(block)
            names.extend(f"{col.name}={v}" for v in vocab)
            names.append(f"{col.name}=<unknown>")

    y = None
    if has_labels:
        label_index = {v: i for i, v in enumerate(schema.label_values)}
        y = np.empty(n, dtype=np.int64)
        for i, row in enumerate(rows):
            cell = row[schema.label_column]
            if cell not in label_index:
                raise ValueError(
                    f"{path}: row {i + 2}: label {cell!r} not in schema label_values"
                )
            y[i] = label_index[cell]

    x = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Dataset(
        x=x,
        y=y,
        num_classes=schema.num_classes,
        feature_names=tuple(names),
        stats=stats,
    )


def load_csv(path: str, schema: Schema, stats: FeatureStats | None = None) -> Dataset:
    """Load and encode a CSV; fits stats on the file itself when none given.

    Pass the stats of the training dataset when loading calibration, test,
    or prediction data so normalization comes from the training split only.
    """
    rows, has_labels = read_csv_rows(path, schema)
    if stats is None:
        stats = fit_stats(rows, schema, path)
    return encode_rows(rows, schema, stats, has_labels=has_labels, path=path)


def standardize(dataset: Dataset, stats: FeatureStats | None = None) -> Dataset:
    """Z-score every feature column; fits moments on ``dataset`` when no
    stats are given. Used for synthetic data, whose raw features bypass the
    schema pipeline; constant columns keep std 1 so they map to zero."""
    if stats is None:
        mean = dataset.x.mean(axis=0)
        std = dataset.x.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        stats = FeatureStats(
            means={name: float(m) for name, m in zip(dataset.feature_names, mean)},
            stds={name: float(s) for name, s in zip(dataset.feature_names, std)},
            vocabs={},
        )
    else:
        missing = [n for n in dataset.feature_names if n not in stats.means]
        if missing:
            raise ValueError(f"stats lack moments for columns {missing}")
        mean = np.array([stats.means[n] for n in dataset.feature_names])
        std = np.array([stats.stds[n] for n in dataset.feature_names])
    return Dataset(
        x=(dataset.x - mean) / std,
        y=dataset.y,
        num_classes=dataset.num_classes,
        feature_names=dataset.feature_names,
        stats=stats,
    )


def standardize_splits(proper: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Z-score a family of splits with moments fitted on the proper training
    split only, mirroring the CSV pipeline's train-only stats rule."""
    proper = standardize(proper)
    return (proper, *(standardize(ds, proper.stats) for ds in others))


# ---------------------------------------------------------------------------
# synthetic blobs
# ---------------------------------------------------------------------------

def make_blobs(
    n: int, c: int, d: int, separation: float, rng: np.random.Generator
) -> Dataset:
    """Isotropic unit-variance Gaussian clusters with pairwise-equidistant centers.

    Centers sit at the vertices of a regular simplex with edge length
    ``separation`` (so every pair of centers is exactly that far apart),
    which needs d >= c - 1. Labels are balanced within one instance.
    """
    if n < c:
        raise ValueError(f"need at least one point per class: n={n}, c={c}")
    if c < 1:
        raise ValueError("c must be >= 1")
    if separation <= 0.0:
        raise ValueError(f"separation must be > 0, got {separation}")
    if d < max(1, c - 1):
        raise ValueError(f"equidistant centers for {c} classes need d >= {c - 1}")

    centers = np.zeros((c, d))
    if c > 1:
        a = separation / np.sqrt(2.0)
        u = a * (np.sqrt(c) - 1.0) / (c - 1)
        for i in range(c - 1):
            centers[i, : c - 1] = u
            centers[i, i] += a

    counts = np.full(c, n // c)
    counts[: n % c] += 1
    y = np.repeat(np.arange(c), counts)
    x = centers[y] + rng.standard_normal((n, d))
    return Dataset(
        x=x,
        y=y,
        num_classes=c,
        feature_names=tuple(f"x{i}" for i in range(d)),
        stats=None,
    )


# ---------------------------------------------------------------------------
# model artifacts
# ---------------------------------------------------------------------------

@dataclass
class ModelArtifact:
    """Everything needed to reproduce predictions: parameters, head,
    preprocessing state, embedded training set, and calibration scores."""

    model: EmbeddingModel
    sigma: float
    num_classes: int
    schema: Schema | None = None
    stats: FeatureStats | None = None
    embedded: EmbeddedTrainingSet | None = None
    calibrations: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.model.head == DWAC and self.embedded is None:
            raise ValueError("dwac artifacts must carry the embedded training set")


def _encode_vector(v: np.ndarray) -> list[str]:
    return [repr(float(x)) for x in v]


def _encode_matrix(m: np.ndarray) -> list[list[str]]:
    return [_encode_vector(row) for row in m]


def _decode_vector(v: list[str]) -> np.ndarray:
    return np.array([float(x) for x in v], dtype=np.float64)


def _decode_matrix(m: list[list[str]]) -> np.ndarray:
    if not m:
        return np.zeros((0, 0))
    return np.array([[float(x) for x in row] for row in m], dtype=np.float64)


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory plus rename, so a crash
    never leaves a partial file at the target path."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(artifact: ModelArtifact, path: str) -> None:
    """Serialize an artifact to a single JSON document at ``path``."""
    model = artifact.model
    doc = {
        "format": FORMAT_VERSION,
        "spec": {
            "layer_sizes": list(model.spec.layer_sizes),
            "dropout_prob": model.spec.dropout_prob,
        },
        "head": model.head,
        "sigma": artifact.sigma,
        "num_classes": artifact.num_classes,
        "weights": [_encode_matrix(w) for w in model.weights],
        "biases": [_encode_vector(b) for b in model.biases],
        "schema": artifact.schema.to_json_dict() if artifact.schema else None,
        "stats": _encode_stats(artifact.stats) if artifact.stats else None,
        "embedded": None,
        "calibrations": {
            measure: _encode_vector(scores)
            for measure, scores in sorted(artifact.calibrations.items())
        },
    }
    if artifact.embedded is not None:
        doc["embedded"] = {
            "h": _encode_matrix(artifact.embedded.h),
            "labels": [int(v) for v in artifact.embedded.labels],
            "num_classes": artifact.embedded.num_classes,
        }
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1))


def _encode_stats(stats: FeatureStats) -> dict:
    return {
        "means": {k: repr(v) for k, v in sorted(stats.means.items())},
        "stds": {k: repr(v) for k, v in sorted(stats.stds.items())},
        "vocabs": {k: list(v) for k, v in sorted(stats.vocabs.items())},
    }


def _decode_stats(obj: dict) -> FeatureStats:
    return FeatureStats(
        means={k: float(v) for k, v in obj["means"].items()},
        stds={k: float(v) for k, v in obj["stds"].items()},
        vocabs={k: tuple(v) for k, v in obj["vocabs"].items()},
    )


def load_model(path: str) -> ModelArtifact:
    """Load an artifact saved by :func:`save_model`; rejects wrong versions,
    truncated files, and dwac artifacts missing their embedded training set."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: truncated or corrupt model file: {e}") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported format {doc.get('format')!r}, expected {FORMAT_VERSION!r}"
        )
    try:
        spec = MlpSpec(
            layer_sizes=tuple(doc["spec"]["layer_sizes"]),
            dropout_prob=float(doc["spec"]["dropout_prob"]),
        )
        model = EmbeddingModel(
            spec=spec,
            weights=[_decode_matrix(w) for w in doc["weights"]],
            biases=[_decode_vector(b) for b in doc["biases"]],
            head=doc["head"],
        )
        embedded = None
        if doc["embedded"] is not None:
            embedded = EmbeddedTrainingSet(
                h=_decode_matrix(doc["embedded"]["h"]),
                labels=np.array(doc["embedded"]["labels"], dtype=np.int64),
                num_classes=int(doc["embedded"]["num_classes"]),
            )
        return ModelArtifact(
            model=model,
            sigma=float(doc["sigma"]),
            num_classes=int(doc["num_classes"]),
            schema=Schema.from_json_dict(doc["schema"]) if doc["schema"] else None,
            stats=_decode_stats(doc["stats"]) if doc["stats"] else None,
            embedded=embedded,
            calibrations={
                measure: _decode_vector(scores)
                for measure, scores in doc["calibrations"].items()
            },
        )
    except (KeyError, TypeError) as e:
        raise ValueError(f"{path}: incomplete model file (missing {e})") from None
