"""Export generated rows as training data, including regression targets from quantile anchors."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import DatasetSchema
from .errors import BadQuantiles, ClassAnchorMismatch, EmptyTargets, MalformedSchema, OutOfDomain
from .prompts import ORDINAL_LABELS
from .prototype import GeneratedValueStore

logger = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.1, 0.3, 0.5, 0.7, 0.9)
STD_FLOOR = 1e-12

# rational approximation coefficients for the probit function
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


@dataclass(frozen=True)
class AugmentedSample:
    cls: int
    k: int
    vector: np.ndarray
    target: Optional[float] = None


@dataclass(frozen=True)
class QuantileAnchors:
    mu: float
    sigma: float
    q: tuple
    anchors: tuple


def normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _probit_rational(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        return -_probit_rational(1.0 - p)
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0))


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile: rational approximation plus one Newton step."""
    if not 0.0 < p < 1.0:
        raise OutOfDomain(f"probability must lie in (0, 1), got {p}")
    x = _probit_rational(p)
    err = normal_cdf(x) - p
    return x - err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)


def fit_gaussian(targets: Sequence[float]):
    """Sample mean and population standard deviation (1 when degenerate)."""
    arr = [float(t) for t in targets]
    if not arr:
        raise EmptyTargets("need at least one regression target")
    mu = math.fsum(arr) / len(arr)
    sigma = math.sqrt(math.fsum((t - mu) ** 2 for t in arr) / len(arr))
    return mu, (sigma if sigma >= STD_FLOOR else 1.0)


def quantile_anchors(mu: float, sigma: float, q: Sequence[float] = DEFAULT_QUANTILES) -> QuantileAnchors:
    q = tuple(float(x) for x in q)
    if not q or any(not 0 < x < 1 for x in q) or any(a >= b for a, b in zip(q, q[1:])):
        raise BadQuantiles(f"quantiles must be strictly increasing inside (0, 1): {q}")
    if not sigma > 0:
        raise BadQuantiles(f"sigma must be positive, got {sigma}")
    return QuantileAnchors(mu, sigma, q, tuple(mu + sigma * inverse_normal_cdf(x) for x in q))


def export_augmented(store: GeneratedValueStore, schema: DatasetSchema) -> list:
    """One unscaled row per (class, query) concatenating that query's values across features.

    Rows where some feature has no value for that query are skipped.
    """
    rows, skipped = [], 0
    for c in range(schema.n_classes):
        per_feature = [store.values(c, d) for d in range(schema.n_features)]
        for k in range(1, store.K + 1):
            parts = []
            for d, values in enumerate(per_feature):
                payloads = [v.payload for v in values if v.query == k]
                if not payloads:
                    break
                if isinstance(payloads[0], np.ndarray):
                    parts.append(np.mean(payloads, axis=0) if len(payloads) > 1 else payloads[0])
                else:
                    parts.append(np.array([math.fsum(payloads) / len(payloads)]))
            else:
                rows.append(AugmentedSample(c, k, np.concatenate(parts)))
                continue
            skipped += 1
            logger.warning("skipping augmented row class=%r k=%d: feature %r has no value",
                           schema.class_labels[c], k, schema.features[d].name)
    if skipped:
        logger.warning("%d of %d augmented rows skipped", skipped, schema.n_classes * store.K)
    return rows


def build_regression_augmented(store: GeneratedValueStore, anchors: QuantileAnchors,
                               schema: DatasetSchema) -> list:
    if len(anchors.anchors) != schema.n_classes or tuple(schema.class_labels) != ORDINAL_LABELS:
        raise ClassAnchorMismatch(
            f"{len(anchors.anchors)} anchors for classes {list(schema.class_labels)}; "
            f"expected the five ordinal classes")
    return [AugmentedSample(r.cls, r.k, r.vector, anchors.anchors[r.cls]) for r in export_augmented(store, schema)]


# --------------------------------------------------------------------------
# files


def layout_json(schema: DatasetSchema) -> dict:
    slots = []
    for f, (off, width) in zip(schema.features, schema.layout):
        for j in range(width):
            slots.append({
                "slot": off + j,
                "feature": f.name,
                "category": f.categories[j] if f.is_categorical else None,
            })
    return {
        "features": [{"name": f.name, "offset": off, "length": width}
                     for f, (off, width) in zip(schema.features, schema.layout)],
        "slots": slots,
    }


def write_layout(path, schema: DatasetSchema) -> None:
    Path(path).write_text(json.dumps(layout_json(schema), indent=1) + "\n", encoding="utf-8")


def write_augmented_csv(path, rows: Sequence[AugmentedSample], schema: DatasetSchema,
                        hard_categories: bool = False) -> None:
    """Encoded-layout CSV, or raw feature columns with argmax categories."""
    with_target = any(r.target is not None for r in rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if hard_categories:
            head = [f.name for f in schema.features]
        else:
            head = [f"slot_{i}" for i in range(schema.width)]
        writer.writerow(["class", "k"] + head + (["target"] if with_target else []))
        for r in rows:
            if hard_categories:
                cells = []
                for f, (off, width) in zip(schema.features, schema.layout):
                    block = r.vector[off:off + width]
                    cells.append(f.categories[int(np.argmax(block))] if f.is_categorical else repr(float(block[0])))
            else:
                cells = [repr(float(x)) for x in r.vector]
            tail = [repr(float(r.target))] if with_target else []
            writer.writerow([schema.class_labels[r.cls], r.k] + cells + tail)


def read_augmented_csv(path, schema: DatasetSchema) -> list:
    """Inverse of :func:`write_augmented_csv` for the encoded layout."""
    label_index = {lab: c for c, lab in enumerate(schema.class_labels)}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        width = schema.width
        if header[2:2 + width] != [f"slot_{i}" for i in range(width)]:
            raise MalformedSchema(f"{path}: header does not match the schema layout")
        with_target = len(header) == 3 + width and header[-1] == "target"
        for line in reader:
            vec = np.array([float(x) for x in line[2:2 + width]])
            target = float(line[-1]) if with_target else None
            rows.append(AugmentedSample(label_index[line[0]], int(line[1]), vec, target))
    return rows
