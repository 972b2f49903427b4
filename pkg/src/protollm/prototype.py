"""Feature weighting, prototype construction and distance-based class probabilities."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import DatasetSchema, Layout, RawSample, Scaler, encode
from .errors import (
    EmptyPool,
    LengthMismatch,
    MissingPrototype,
    NonFiniteWeight,
    ShapeMismatch,
)
from .parsing import GeneratedValue

logger = logging.getLogger(__name__)

METRICS = ("euclidean", "manhattan", "cosine")
WEIGHT_METHODS = ("sum", "softmax", "minmax", "uniform")
SOFTMAX_TEMPERATURES = (0.1, 0.5, 1.0, 2.0)

_P_MIN = np.finfo(float).tiny
_P_MAX = np.nextafter(1.0, 0.0)


# --------------------------------------------------------------------------
# generated values


class GeneratedValueStore:
    """Generated values ``z[c, d, k]``; cells may hold fewer than ``K`` entries."""

    def __init__(self, schema: DatasetSchema, K: int, expanded: bool = False):
        self.schema = schema
        self.K = K
        self.expanded = expanded
        self._cells = {(c, d): [] for c in range(schema.n_classes) for d in range(schema.n_features)}

    def add(self, value: GeneratedValue) -> None:
        f = self.schema.features[value.feature]
        if not 1 <= value.query <= self.K:
            raise ShapeMismatch(f"query index {value.query} outside 1..{self.K}")
        if f.is_categorical:
            if not isinstance(value.payload, np.ndarray) or value.payload.shape != (f.width,):
                raise ShapeMismatch(f"feature {f.name!r} expects a length-{f.width} block")
        elif isinstance(value.payload, np.ndarray):
            raise ShapeMismatch(f"feature {f.name!r} expects a scalar")
        self._cells[(value.cls, value.feature)].append(value)

    def values(self, c: int, d: int) -> list:
        return list(self._cells[(c, d)])

    def payloads(self, c: int, d: int) -> list:
        return [v.payload for v in self._cells[(c, d)]]

    def count(self, c: int, d: int) -> int:
        return len(self._cells[(c, d)])

    def queries(self, c: int, d: int) -> set:
        return {v.query for v in self._cells[(c, d)]}

    def to_json(self) -> dict:
        out = {}
        for d, f in enumerate(self.schema.features):
            per_class = {}
            for c in range(self.schema.n_classes):
                slots = [None] * self.K
                for v in self._cells[(c, d)]:
                    if f.is_categorical:
                        slots[v.query - 1] = v.payload.tolist()
                    elif self.expanded:
                        slots[v.query - 1] = (slots[v.query - 1] or []) + [v.payload]
                    else:
                        slots[v.query - 1] = v.payload
                per_class[str(c)] = slots
            out[str(d)] = per_class
        return out

    @classmethod
    def from_json(cls, data: dict, schema: DatasetSchema) -> "GeneratedValueStore":
        lengths = {len(slots) for per_class in data.values() for slots in per_class.values()}
        K = max(lengths) if lengths else 0
        expanded = False
        store = cls(schema, K)
        for d_key, per_class in data.items():
            d = int(d_key)
            f = schema.features[d]
            for c_key, slots in per_class.items():
                c = int(c_key)
                for k, entry in enumerate(slots, start=1):
                    if entry is None:
                        continue
                    if f.is_categorical:
                        store.add(GeneratedValue(d, c, k, np.asarray(entry, dtype=float)))
                    elif isinstance(entry, list):
                        expanded = True
                        for x in entry:
                            store.add(GeneratedValue(d, c, k, float(x)))
                    else:
                        store.add(GeneratedValue(d, c, k, float(entry)))
        store.expanded = expanded
        return store

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, schema: DatasetSchema) -> "GeneratedValueStore":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")), schema)


# --------------------------------------------------------------------------
# weights


@dataclass(frozen=True)
class FeatureWeights:
    raw: np.ndarray
    normalized: np.ndarray
    method: str
    temperature: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "raw": self.raw.tolist(),
            "normalized": self.normalized.tolist(),
            "method": self.method,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureWeights":
        return cls(np.asarray(data["raw"], float), np.asarray(data["normalized"], float),
                   data["method"], data.get("temperature"))

    def slot_weights(self, layout: Layout) -> np.ndarray:
        """Expand per-feature weights to one weight per encoded slot."""
        return np.concatenate([np.full(length, w) for w, (_, length) in zip(self.normalized, layout)])


def parse_weight_method(spec: str):
    """``'softmax:0.5'`` -> ``('softmax', 0.5)``; ``'off'`` maps to uniform weights."""
    spec = spec.strip().lower()
    if spec == "off":
        return "uniform", None
    if spec.startswith("softmax"):
        _, _, t = spec.partition(":")
        return "softmax", float(t) if t else 1.0
    if spec in ("sum", "minmax", "uniform"):
        return spec, None
    raise ValueError(f"unknown weight method {spec!r}")


def normalize_weights(raw, method: str = "sum", temperature: Optional[float] = None) -> FeatureWeights:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 1 or raw.size == 0:
        raise ShapeMismatch("weights must be a non-empty vector")
    if not np.all(np.isfinite(raw)):
        raise NonFiniteWeight(f"non-finite raw weights: {raw.tolist()}")
    D = raw.size
    if method == "sum" and math.fsum(raw) <= 0:
        logger.warning("all raw weights are zero; falling back to uniform weights")
        method = "uniform"
    if method == "uniform":
        norm = np.full(D, 1.0 / D)
    elif method == "sum":
        norm = raw / math.fsum(raw)
    elif method == "softmax":
        temperature = 1.0 if temperature is None else temperature
        if temperature <= 0:
            raise ValueError("softmax temperature must be positive")
        z = raw / temperature
        e = np.exp(z - z.max())
        norm = e / math.fsum(e)
    elif method == "minmax":
        lo, hi = raw.min(), raw.max()
        norm = np.ones(D) if hi == lo else (raw - lo) / (hi - lo)
    else:
        raise ValueError(f"unknown weight method {method!r}")
    return FeatureWeights(raw, norm, method, temperature if method == "softmax" else None)


def uniform_weights(D: int) -> FeatureWeights:
    return normalize_weights(np.ones(D), "uniform")


# --------------------------------------------------------------------------
# prototypes


@dataclass(frozen=True)
class Prototype:
    cls: int
    theta: tuple  # per feature: float or np.ndarray block
    vector: np.ndarray


def build_prototype_component(generated: Sequence, samples: Sequence):
    """Pooled mean of generated values and sample values for one (class, feature).

    With no samples this is the plain average of the generated values; with no
    generated values it is the plain class mean of the samples.
    """
    pool = list(generated) + list(samples)
    if not pool:
        raise EmptyPool("no generated values and no samples to average")
    if isinstance(pool[0], np.ndarray):
        stacked = np.vstack(pool)
        return np.array([math.fsum(col) for col in stacked.T]) / len(pool)
    return math.fsum(pool) / len(pool)


def assemble_prototype(thetas: Sequence, weights: FeatureWeights, schema: DatasetSchema, cls: int = 0) -> Prototype:
    if len(thetas) != schema.n_features or len(weights.normalized) != schema.n_features:
        raise ShapeMismatch(f"expected {schema.n_features} components and weights")
    parts = []
    for f, theta, w in zip(schema.features, thetas, weights.normalized):
        block = np.atleast_1d(np.asarray(theta, dtype=float))
        if block.shape != (f.width,):
            raise ShapeMismatch(f"feature {f.name!r}: component has shape {block.shape}, expected ({f.width},)")
        parts.append(w * block)
    return Prototype(cls, tuple(thetas), np.concatenate(parts))


def pipeline_scaler(store: Optional[GeneratedValueStore], train: Sequence[RawSample], schema: DatasetSchema) -> Scaler:
    """z-score fitted on generated numerical values together with few-shot sample values."""
    columns = {}
    for d, f in enumerate(schema.features):
        if f.is_categorical:
            continue
        pool = [s.values[d] for s in train]
        if store is not None:
            for c in range(schema.n_classes):
                pool.extend(store.payloads(c, d))
        columns[d] = pool
    return Scaler.from_columns(columns)


def build_prototypes(store: Optional[GeneratedValueStore], train: Sequence[RawSample], schema: DatasetSchema,
                     weights: FeatureWeights, scaler: Scaler) -> list:
    """One prototype per class from (scaled) generated values pooled with few-shot rows."""
    encoded = [(s.label, scaler.apply(encode(s, schema).vector, schema.layout)) for s in train]
    protos = []
    for c in range(schema.n_classes):
        rows = [vec for label, vec in encoded if label == c]
        thetas = []
        for d, (f, (off, width)) in enumerate(zip(schema.features, schema.layout)):
            gen = store.payloads(c, d) if store is not None else []
            if f.is_categorical:
                sam = [vec[off:off + width] for vec in rows]
            else:
                gen = [scaler.scale_value(d, z) for z in gen]
                sam = [vec[off] for vec in rows]
            if not gen and not sam:
                raise EmptyPool(f"class {schema.class_labels[c]!r}, feature {f.name!r}: nothing to average")
            thetas.append(build_prototype_component(gen, sam))
        protos.append(assemble_prototype(thetas, weights, schema, c))
    return protos


# --------------------------------------------------------------------------
# inference


def distance(a, b, metric: str = "euclidean") -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"vectors of length {a.size} and {b.size}")
    if metric == "euclidean":
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if metric == "manhattan":
        return float(np.sum(np.abs(a - b)))
    if metric == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 1.0
        # rounding can push the cosine a hair outside [-1, 1]
        return float(max(0.0, 1.0 - float(a @ b) / (na * nb)))
    raise ValueError(f"unknown metric {metric!r}")


def distance_matrix(X: np.ndarray, P: np.ndarray, metric: str = "euclidean") -> np.ndarray:
    """Distances between rows of ``X`` (n, L) and prototype rows ``P`` (C, L)."""
    diff = X[:, None, :] - P[None, :, :]
    if metric == "euclidean":
        return np.sqrt(np.sum(diff ** 2, axis=2))
    if metric == "manhattan":
        return np.sum(np.abs(diff), axis=2)
    if metric == "cosine":
        nx = np.linalg.norm(X, axis=1)[:, None]
        npr = np.linalg.norm(P, axis=1)[None, :]
        denom = nx * npr
        with np.errstate(invalid="ignore", divide="ignore"):
            d = 1.0 - (X @ P.T) / denom
        return np.where(denom == 0, 1.0, np.maximum(d, 0.0))
    raise ValueError(f"unknown metric {metric!r}")


def softmax_neg(distances: np.ndarray) -> np.ndarray:
    """``exp(-d) / sum exp(-d)`` along the last axis, kept strictly inside (0, 1)."""
    d = np.asarray(distances, dtype=float)
    logits = -(d - d.min(axis=-1, keepdims=True))
    e = np.exp(logits)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.clip(p, _P_MIN, _P_MAX)


def _check_prototypes(prototypes: Sequence[Prototype], n_classes: Optional[int]):
    have = {p.cls for p in prototypes}
    n = n_classes if n_classes is not None else len(prototypes)
    for c in range(n):
        if c not in have:
            raise MissingPrototype(f"no prototype for class {c}")
    return np.vstack([p.vector for p in sorted(prototypes, key=lambda p: p.cls)])


def predict(x, prototypes: Sequence[Prototype], weights: FeatureWeights, metric: str = "euclidean",
            layout: Optional[Layout] = None, n_classes: Optional[int] = None) -> np.ndarray:
    """Class probabilities for one encoded (and already scaled) sample."""
    layout = layout if layout is not None else getattr(x, "layout", None)
    vec = np.asarray(getattr(x, "vector", x), dtype=float)
    P = _check_prototypes(prototypes, n_classes)
    if layout is None:
        raise ShapeMismatch("a block layout is needed to weight the sample")
    if vec.shape[0] != P.shape[1]:
        raise LengthMismatch(f"sample length {vec.shape[0]} != prototype length {P.shape[1]}")
    xw = weights.slot_weights(layout) * vec
    d = np.array([distance(p, xw, metric) for p in P])
    return softmax_neg(d)


def predict_matrix(X: np.ndarray, prototypes: Sequence[Prototype], weights: FeatureWeights,
                   metric: str, layout: Layout, n_classes: Optional[int] = None) -> np.ndarray:
    P = _check_prototypes(prototypes, n_classes)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != P.shape[1]:
        raise LengthMismatch(f"samples of width {X.shape[-1]} vs prototypes of width {P.shape[1]}")
    Xw = X * weights.slot_weights(layout)[None, :]
    return softmax_neg(distance_matrix(Xw, P, metric))
