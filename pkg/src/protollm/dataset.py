"""Tabular data handling: schema, CSV loading, one-hot encoding, z-scoring, splits.

Cells of a :class:`RawSample` are plain Python values: ``float`` for numerical
features, ``str`` for categorical ones and ``None`` for a missing cell.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import (
    AllFeaturesDropped,
    EmptyPool,
    InsufficientClassSamples,
    MalformedSchema,
    MissingCell,
    NonNumeric,
    UnknownCategory,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERICAL = "numerical"

STD_FLOOR = 1e-12
TEST_FRACTION = 0.2

Cell = Union[float, str, None]
Layout = tuple  # tuple[(offset, length), ...] indexed by feature


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    description: str
    kind: str
    categories: tuple = ()
    value_count_m: int = 5

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, NUMERICAL):
            raise MalformedSchema(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.categories:
                raise MalformedSchema(f"feature {self.name!r}: empty category list")
            dupes = [c for c, n in Counter(self.categories).items() if n > 1]
            if dupes:
                raise MalformedSchema(f"feature {self.name!r}: duplicate categories {dupes}")
        elif self.categories:
            raise MalformedSchema(f"feature {self.name!r}: numerical feature lists categories")
        if not isinstance(self.value_count_m, int) or self.value_count_m < 1:
            raise MalformedSchema(f"feature {self.name!r}: value_count_m must be a positive integer")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL

    @property
    def width(self) -> int:
        return len(self.categories) if self.is_categorical else 1


@dataclass(frozen=True)
class DatasetSchema:
    task_description: str
    class_labels: tuple
    features: tuple
    target_column: str
    name: str = "dataset"

    def __post_init__(self):
        if len(self.class_labels) < 2 or len(set(self.class_labels)) != len(self.class_labels):
            raise MalformedSchema("class_labels needs at least 2 distinct entries")
        if not self.features:
            raise MalformedSchema("schema has no features")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise MalformedSchema("duplicate feature names")
        if self.target_column in names:
            raise MalformedSchema(f"target_column {self.target_column!r} is also a feature name")

    @property
    def n_classes(self) -> int:
        return len(self.class_labels)

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def layout(self) -> Layout:
        blocks, offset = [], 0
        for f in self.features:
            blocks.append((offset, f.width))
            offset += f.width
        return tuple(blocks)

    @property
    def width(self) -> int:
        return sum(f.width for f in self.features)

    def feature_index(self, name: str) -> int:
        for d, f in enumerate(self.features):
            if f.name == name:
                return d
        raise KeyError(name)

    def to_dict(self) -> dict:
        feats = []
        for f in self.features:
            item = {"name": f.name, "description": f.description, "type": f.kind}
            if f.is_categorical:
                item["categories"] = list(f.categories)
            item["value_count_m"] = f.value_count_m
            feats.append(item)
        return {
            "name": self.name,
            "task_description": self.task_description,
            "class_labels": list(self.class_labels),
            "target_column": self.target_column,
            "features": feats,
        }


@dataclass(frozen=True)
class RawSample:
    values: tuple
    label: Optional[int] = None

    @property
    def has_missing(self) -> bool:
        return any(v is None for v in self.values)


@dataclass(frozen=True)
class EncodedSample:
    vector: np.ndarray
    layout: Layout
    label: Optional[int] = None


@dataclass(frozen=True)
class Scaler:
    """Per-feature z-score parameters, keyed by feature index."""

    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)

    def scale_value(self, d: int, x: float) -> float:
        if d not in self.means:
            return x
        return (x - self.means[d]) / self.stds[d]

    def unscale_value(self, d: int, x: float) -> float:
        if d not in self.means:
            return x
        return x * self.stds[d] + self.means[d]

    def apply(self, vector: np.ndarray, layout: Layout) -> np.ndarray:
        out = np.array(vector, dtype=float)
        for d in self.means:
            off, _ = layout[d]
            out[off] = (out[off] - self.means[d]) / self.stds[d]
        return out

    def invert(self, vector: np.ndarray, layout: Layout) -> np.ndarray:
        out = np.array(vector, dtype=float)
        for d in self.means:
            off, _ = layout[d]
            out[off] = out[off] * self.stds[d] + self.means[d]
        return out

    def to_dict(self) -> dict:
        return {
            "means": {str(d): m for d, m in sorted(self.means.items())},
            "stds": {str(d): s for d, s in sorted(self.stds.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scaler":
        return cls(
            means={int(d): float(m) for d, m in data["means"].items()},
            stds={int(d): float(s) for d, s in data["stds"].items()},
        )

    @classmethod
    def from_columns(cls, columns: dict) -> "Scaler":
        """Fit from ``{feature index: iterable of raw numerical values}``."""
        means, stds = {}, {}
        for d, values in sorted(columns.items()):
            arr = np.asarray(list(values), dtype=float)
            if arr.size == 0:
                raise EmptyPool(f"no values to fit the scaler for feature {d}")
            mean = math.fsum(arr) / arr.size
            std = math.sqrt(math.fsum((arr - mean) ** 2) / arr.size)
            means[d] = mean
            stds[d] = std if std >= STD_FLOOR else 1.0
        return cls(means, stds)


# --------------------------------------------------------------------------
# loading


def schema_from_dict(data: dict, name: str = "dataset") -> DatasetSchema:
    for key in ("task_description", "class_labels", "target_column", "features"):
        if key not in data:
            raise MalformedSchema(f"schema is missing field {key!r}")
    features = []
    for i, item in enumerate(data["features"]):
        fname = item.get("name", f"#{i}")
        for key in ("name", "description", "type"):
            if key not in item:
                raise MalformedSchema(f"feature {fname!r}: missing field {key!r}")
        kind = item["type"]
        if kind == CATEGORICAL and "categories" not in item:
            raise MalformedSchema(f"feature {fname!r}: categorical feature needs 'categories'")
        features.append(
            FeatureSpec(
                name=item["name"],
                description=item["description"],
                kind=kind,
                categories=tuple(item.get("categories", ())) if kind == CATEGORICAL else (),
                value_count_m=item.get("value_count_m", 5),
            )
        )
    return DatasetSchema(
        task_description=data["task_description"],
        class_labels=tuple(data["class_labels"]),
        features=tuple(features),
        target_column=data["target_column"],
        name=data.get("name", name),
    )


def load_schema(path) -> DatasetSchema:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedSchema(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise MalformedSchema(f"{path}: schema must be a JSON object")
    return schema_from_dict(data, name=path.stem)


def parse_cell(feature: FeatureSpec, token: str, row: int) -> Cell:
    if token == "":
        return None
    if feature.is_categorical:
        if token not in feature.categories:
            raise UnknownCategory(row, feature.name, token)
        return token
    try:
        value = float(token)
    except ValueError:
        raise NonNumeric(row, feature.name, token) from None
    if not math.isfinite(value):
        raise NonNumeric(row, feature.name, token)
    return value


def load_csv(path, schema: DatasetSchema, require_label: bool = True) -> list:
    """Read an RFC-4180 CSV into :class:`RawSample` rows, preserving order.

    With ``require_label=False`` the target column may be absent or hold
    values outside the class labels; such rows get ``label=None``. Row numbers in errors are 1-based data rows (the header is row 0).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedSchema(f"{path}: empty CSV") from None
        columns = {name: i for i, name in enumerate(header)}
        missing = [f.name for f in schema.features if f.name not in columns]
        if missing:
            raise MalformedSchema(f"{path}: header lacks feature columns {missing}")
        has_target = schema.target_column in columns
        if require_label and not has_target:
            raise MalformedSchema(f"{path}: header lacks target column {schema.target_column!r}")
        label_index = {lab: c for c, lab in enumerate(schema.class_labels)}
        samples = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            values = tuple(
                parse_cell(f, row[columns[f.name]].strip(), row_no) for f in schema.features
            )
            label = None
            if has_target:
                token = row[columns[schema.target_column]].strip()
                if token in label_index:
                    label = label_index[token]
                elif require_label:
                    raise UnknownLabel(row_no, token)
            samples.append(RawSample(values, label))
    return samples


def load_targets(path, column: str) -> list:
    """Numeric target column of a CSV (regression mode), ``None`` for empty cells.

    Rows line up with :func:`load_csv` on the same file.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise MalformedSchema(f"{path}: no column {column!r}")
        out = []
        for row_no, row in enumerate(reader, start=1):
            token = (row[column] or "").strip()
            if token == "":
                out.append(None)
                continue
            try:
                out.append(float(token))
            except ValueError:
                raise NonNumeric(row_no, column, token) from None
    return out


def write_csv(path, samples: Sequence[RawSample], schema: DatasetSchema) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in schema.features] + [schema.target_column])
        for s in samples:
            cells = ["" if v is None else (v if isinstance(v, str) else repr(float(v))) for v in s.values]
            label = "" if s.label is None else schema.class_labels[s.label]
            writer.writerow(cells + [label])


# --------------------------------------------------------------------------
# cleaning and encoding


def drop_sparse_features(samples: Sequence[RawSample], schema: DatasetSchema, threshold: float = 0.20):
    """Remove features whose missing-cell fraction exceeds ``threshold``."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    n = len(samples)
    keep = []
    for d, f in enumerate(schema.features):
        n_missing = sum(1 for s in samples if s.values[d] is None)
        if n and n_missing / n > threshold:
            logger.info("dropping feature %r: %d/%d cells missing", f.name, n_missing, n)
        else:
            keep.append(d)
    if not keep:
        raise AllFeaturesDropped(f"every feature exceeds the missing threshold {threshold}")
    if len(keep) == schema.n_features:
        return list(samples), schema
    new_schema = replace(schema, features=tuple(schema.features[d] for d in keep))
    new_samples = [RawSample(tuple(s.values[d] for d in keep), s.label) for s in samples]
    return new_samples, new_schema


def one_hot(feature: FeatureSpec, token: str) -> np.ndarray:
    vec = np.zeros(len(feature.categories))
    vec[feature.categories.index(token)] = 1.0
    return vec


def encode(sample: RawSample, schema: DatasetSchema) -> EncodedSample:
    vec = np.zeros(schema.width)
    for (off, width), f, v in zip(schema.layout, schema.features, sample.values):
        if v is None:
            raise MissingCell(f.name)
        if f.is_categorical:
            vec[off + f.categories.index(v)] = 1.0
        else:
            vec[off] = float(v)
    return EncodedSample(vec, schema.layout, sample.label)


def encode_matrix(samples: Sequence[RawSample], schema: DatasetSchema) -> np.ndarray:
    if not samples:
        return np.zeros((0, schema.width))
    return np.vstack([encode(s, schema).vector for s in samples])


def fit_scaler(pool: Sequence, schema: DatasetSchema) -> Scaler:
    """Population mean/stddev of every numerical slot over ``pool``.

    ``pool`` may hold :class:`EncodedSample` objects or bare vectors.
    """
    if len(pool) == 0:
        raise EmptyPool("cannot fit a scaler on an empty pool")
    columns = {}
    for d, f in enumerate(schema.features):
        if f.is_categorical:
            continue
        off, _ = schema.layout[d]
        columns[d] = [getattr(e, "vector", e)[off] for e in pool]
    return Scaler.from_columns(columns)


def impute(samples: Sequence[RawSample], schema: DatasetSchema, pool: Sequence[RawSample]) -> list:
    """Fill missing cells with the pool mean (numerical) or mode (categorical).

    Rows whose missing feature is also unobserved across the whole pool are
    dropped.
    """
    fill = {}
    for d, f in enumerate(schema.features):
        observed = [s.values[d] for s in pool if s.values[d] is not None]
        if not observed:
            continue
        if f.is_categorical:
            counts = Counter(observed)
            # ties resolve to the earliest category in schema order
            fill[d] = max(f.categories, key=lambda c: (counts.get(c, 0), -f.categories.index(c)))
        else:
            fill[d] = math.fsum(observed) / len(observed)
    out = []
    for s in samples:
        if not s.has_missing:
            out.append(s)
            continue
        if any(v is None and d not in fill for d, v in enumerate(s.values)):
            continue
        out.append(RawSample(tuple(fill[d] if v is None else v for d, v in enumerate(s.values)), s.label))
    return out


def drop_incomplete(samples: Sequence[RawSample]) -> list:
    return [s for s in samples if not s.has_missing]


# --------------------------------------------------------------------------
# splitting


def shots_per_class(shot: int, n_classes: int) -> list:
    base, extra = divmod(shot, n_classes)
    return [base + (1 if c < extra else 0) for c in range(n_classes)]


def few_shot_split(samples: Sequence[RawSample], schema: DatasetSchema, shot: int, seed: int):
    """Hold out 20% of rows for testing and draw a class-balanced few-shot set.

    ``shot`` counts training rows across all classes. Returns ``(train, test)``.
    """
    if shot < 0:
        raise ValueError("shot must be non-negative")
    n = len(samples)
    n_test = max(1, int(n * TEST_FRACTION))
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    test = [samples[i] for i in order[:n_test]]
    if shot == 0:
        return [], test
    remainder = order[n_test:]
    by_class = {c: [] for c in range(schema.n_classes)}
    for i in remainder:
        lab = samples[i].label
        if lab is not None:
            by_class[lab].append(i)
    train_idx = []
    for c, need in enumerate(shots_per_class(shot, schema.n_classes)):
        pool = by_class[c]
        if len(pool) < need:
            raise InsufficientClassSamples(schema.class_labels[c], need, len(pool))
        train_idx.extend(pool[:need])
    return [samples[i] for i in train_idx], test
