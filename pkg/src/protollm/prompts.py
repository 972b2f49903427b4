"""Rendering of the example-free value and weight prompts.

Templates live in ``templates/<set>/`` as UTF-8 text with ``{{placeholder}}``
slots. The builders only ever see a :class:`DatasetSchema`, never data rows.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional

from .dataset import DatasetSchema
from .errors import WrongLabelSet

TEMPLATE_SETS = ("original", "alt-task", "simple-cot", "alt-format")
ORDINAL_LABELS = ("very low", "low", "medium", "high", "very high")

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


class PromptKind(str, Enum):
    CATEGORICAL_VALUE = "categorical_value"
    NUMERICAL_VALUE = "numerical_value"
    WEIGHT = "weight"
    REGRESSION_VALUE = "regression_value"


@dataclass(frozen=True)
class PromptText:
    text: str
    kind: PromptKind
    feature_index: Optional[int]
    features: tuple  # names of the features the prompt asks about
    class_labels: tuple
    m: Optional[int]
    template_version: str


@lru_cache(maxsize=None)
def _load(template_set: str, name: str) -> str:
    if template_set not in TEMPLATE_SETS:
        raise ValueError(f"unknown template set {template_set!r}; choose from {TEMPLATE_SETS}")
    root = resources.files("protollm") / "templates" / template_set
    return (root / f"{name}.txt").read_text(encoding="utf-8")


def template_version(template_set: str = "original") -> str:
    return f"{template_set}@{_load(template_set, 'version').strip()}"


def render(template: str, values: dict) -> str:
    def sub(match):
        key = match.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {{{{{key}}}}} has no value")
        return str(values[key])

    return _PLACEHOLDER.sub(sub, template)


def _class_json_schema(labels, feature_name: str, value_type: str) -> str:
    lines = ["{"]
    for label in labels:
        lines.append(
            f"    {json.dumps(label)}: [list of {value_type}]  "
            f"// possible values of feature {feature_name} for target class {label}"
        )
    lines.append("}")
    return "\n".join(lines)


def _value_prompt(schema: DatasetSchema, d: int, labels: tuple, kind: PromptKind, template_set: str) -> PromptText:
    feature = schema.features[d]
    values = {
        "task": schema.task_description,
        "feature_name": feature.name,
        "feature_description": feature.description,
        "m": feature.value_count_m,
        "class_list": json.dumps(list(labels)),
    }
    if feature.is_categorical:
        name = "value_categorical"
        values["categories"] = json.dumps(list(feature.categories))
        values["class_json_schema"] = _class_json_schema(labels, feature.name, "strings")
    else:
        name = "value_numerical"
        values["class_json_schema"] = _class_json_schema(labels, feature.name, "numbers")
    if kind is None:
        kind = PromptKind.CATEGORICAL_VALUE if feature.is_categorical else PromptKind.NUMERICAL_VALUE
    return PromptText(
        text=render(_load(template_set, name), values),
        kind=kind,
        feature_index=d,
        features=(feature.name,),
        class_labels=tuple(labels),
        m=feature.value_count_m,
        template_version=template_version(template_set),
    )


def build_value_prompt(schema: DatasetSchema, d: int, template_set: str = "original") -> PromptText:
    if not 0 <= d < schema.n_features:
        raise IndexError(f"feature index {d} out of range")
    return _value_prompt(schema, d, schema.class_labels, None, template_set)


def build_regression_value_prompt(schema: DatasetSchema, d: int, template_set: str = "original") -> PromptText:
    if tuple(schema.class_labels) != ORDINAL_LABELS:
        raise WrongLabelSet(f"regression prompts need class labels {list(ORDINAL_LABELS)}, got {list(schema.class_labels)}")
    if not 0 <= d < schema.n_features:
        raise IndexError(f"feature index {d} out of range")
    return _value_prompt(schema, d, ORDINAL_LABELS, PromptKind.REGRESSION_VALUE, template_set)


def build_weight_prompt(schema: DatasetSchema, template_set: str = "original") -> PromptText:
    feature_list = []
    for f in schema.features:
        line = f"- {f.name}: {f.description}"
        if f.is_categorical:
            line += f" (categorical, possible values: {json.dumps(list(f.categories))})"
        else:
            line += " (numerical)"
        feature_list.append(line)
    schema_lines = ["{"]
    for f in schema.features:
        schema_lines.append(f"    {json.dumps(f.name)}: number  // importance score of feature {f.name}")
    schema_lines.append("}")
    names = [f.name for f in schema.features]
    text = render(
        _load(template_set, "weight"),
        {
            "task": schema.task_description,
            "feature_list": "\n".join(feature_list),
            "weight_json_schema": "\n".join(schema_lines),
            "feature_names": json.dumps(names),
        },
    )
    return PromptText(
        text=text,
        kind=PromptKind.WEIGHT,
        feature_index=None,
        features=tuple(names),
        class_labels=tuple(schema.class_labels),
        m=None,
        template_version=template_version(template_set),
    )
