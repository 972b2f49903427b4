"""Turn raw LLM replies into typed feature values and raw feature weights."""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import DatasetSchema
from .errors import (
    EmptyClassList,
    JsonSyntax,
    MissingClassKey,
    NoJsonFound,
    NoNumericWeights,
    TypeMismatch,
)

logger = logging.getLogger(__name__)

_FENCE = re.compile(r"```json[ \t]*\r?\n?(.*?)```", re.DOTALL | re.IGNORECASE)
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def _loads(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        # common model slip: trailing commas before a closing bracket
        repaired = _TRAILING_COMMA.sub(r"\1", text)
        if repaired == text:
            raise
        return json.loads(repaired)


def _balanced_objects(text: str):
    """Yield every ``{...}`` substring whose braces balance, honouring strings."""
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth, in_str, escaped = 0, False, False
        for end in range(start, len(text)):
            c = text[end]
            if in_str:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_str = False
            elif c == '"':
                in_str = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:end + 1]
                    break


def extract_json_block(text: str):
    """Return the JSON value of the first ```json fence, else the largest parseable ``{...}``."""
    fence_error = None
    match = _FENCE.search(text)
    if match:
        try:
            return _loads(match.group(1).strip())
        except json.JSONDecodeError as exc:
            fence_error = JsonSyntax(match.start(1) + exc.pos, exc.msg)
    for candidate in sorted(_balanced_objects(text), key=len, reverse=True):
        try:
            return _loads(candidate)
        except json.JSONDecodeError:
            continue
    if fence_error is not None:
        raise fence_error
    raise NoJsonFound("reply contains no parseable JSON object")


@dataclass(frozen=True)
class ValueReply:
    """Per-class value lists for one feature, in class-index order.

    Categorical values are canonical category strings, numerical values floats.
    """

    feature_index: int
    labels: tuple
    values: tuple  # tuple of tuples, one per class

    def to_json(self) -> dict:
        return {label: list(vals) for label, vals in zip(self.labels, self.values)}


@dataclass(frozen=True)
class GeneratedValue:
    feature: int
    cls: int
    query: int
    payload: object  # float, or np.ndarray soft one-hot

    @property
    def is_categorical(self) -> bool:
        return isinstance(self.payload, np.ndarray)


def _norm(s: str) -> str:
    return s.strip().casefold()


def _as_number(x) -> Optional[float]:
    if isinstance(x, bool):
        return None
    if isinstance(x, (int, float)):
        v = float(x)
    elif isinstance(x, str):
        try:
            v = float(x.strip())
        except ValueError:
            return None
    else:
        return None
    return v if math.isfinite(v) else None


def parse_value_reply(obj, schema: DatasetSchema, d: int, labels: Optional[Sequence[str]] = None) -> ValueReply:
    labels = tuple(labels or schema.class_labels)
    if not isinstance(obj, dict):
        raise TypeMismatch(None, None)
    feature = schema.features[d]
    by_key = {}
    for key, val in obj.items():
        by_key.setdefault(_norm(str(key)), val)
    canon = {_norm(cat): cat for cat in feature.categories}
    out = []
    for label in labels:
        if _norm(label) not in by_key:
            raise MissingClassKey(label)
        raw = by_key[_norm(label)]
        if not isinstance(raw, list):
            raw = [raw]
        vals = []
        for i, item in enumerate(raw):
            if feature.is_categorical:
                if isinstance(item, bool) or not isinstance(item, (str, int, float)):
                    raise TypeMismatch(label, i)
                token = item if isinstance(item, str) else json.dumps(item)
                if _norm(token) not in canon:
                    logger.warning("feature %r class %r: dropping unknown category %r", feature.name, label, token)
                    continue
                vals.append(canon[_norm(token)])
            else:
                num = _as_number(item)
                if num is None:
                    raise TypeMismatch(label, i)
                vals.append(num)
        if not vals:
            raise EmptyClassList(label)
        out.append(tuple(vals))
    return ValueReply(d, labels, tuple(out))


def _soft_one_hot(tokens, categories) -> np.ndarray:
    counts = np.zeros(len(categories))
    for t in tokens:
        counts[categories.index(t)] += 1
    return counts / len(tokens)


def to_generated_value(reply: ValueReply, schema: DatasetSchema, d: int, c: int, k: int) -> GeneratedValue:
    """Collapse class ``c``'s list into one value: mean one-hot or mean number."""
    feature = schema.features[d]
    vals = reply.values[c]
    if feature.is_categorical:
        payload = _soft_one_hot(vals, feature.categories)
    else:
        payload = math.fsum(vals) / len(vals)
    return GeneratedValue(d, c, k, payload)


def expand_generated_values(reply: ValueReply, schema: DatasetSchema, d: int, c: int, k: int) -> list:
    """Numerical lists become one value per entry; categorical lists still average."""
    if schema.features[d].is_categorical:
        return [to_generated_value(reply, schema, d, c, k)]
    return [GeneratedValue(d, c, k, float(v)) for v in reply.values[c]]


def parse_weight_reply(obj, schema: DatasetSchema) -> np.ndarray:
    if not isinstance(obj, dict):
        raise NoNumericWeights("weight reply is not a JSON object")
    by_key = {}
    for key, val in obj.items():
        by_key.setdefault(_norm(str(key)), val)
    weights = [None] * schema.n_features
    for d, f in enumerate(schema.features):
        if _norm(f.name) not in by_key:
            continue
        num = _as_number(by_key[_norm(f.name)])
        if num is None:
            logger.warning("weight for feature %r is not numeric", f.name)
            continue
        if num < 0:
            logger.warning("clamping negative weight %g for feature %r to 0", num, f.name)
            num = 0.0
        weights[d] = num
    present = [w for w in weights if w is not None]
    if not present:
        raise NoNumericWeights("no feature weight could be read from the reply")
    if len(present) < len(weights):
        fill = math.fsum(present) / len(present)
        missing = [schema.features[d].name for d, w in enumerate(weights) if w is None]
        logger.warning("no weight for %s; using the mean %g", missing, fill)
        weights = [fill if w is None else w for w in weights]
    return np.asarray(weights, dtype=float)
