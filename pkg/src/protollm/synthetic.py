"""Deterministic stand-in LLM answering value and weight prompts from a planted model.

All randomness comes from SHA-256 of ``plant seed || cache key`` run in counter
mode, so answers are byte-identical across processes, platforms and numpy
versions.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .dataset import DatasetSchema, RawSample
from .errors import UnknownFeatureInPrompt
from .gateway import Backend, ChatRequest, ChatResponse
from .prompts import PromptKind


@dataclass(frozen=True)
class NumericPlant:
    means: dict  # class label -> mean
    noise: Optional[float] = None  # overrides PlantedModel.noise


@dataclass(frozen=True)
class CategoricalPlant:
    categories: tuple
    probs: dict  # class label -> probabilities aligned with categories


@dataclass(frozen=True)
class PlantedModel:
    features: dict  # feature name -> NumericPlant | CategoricalPlant
    noise: float = 1.0
    seed: int = 0
    malformation_rate: float = 0.0
    weights: dict = field(default_factory=dict)  # feature name -> raw importance

    def to_dict(self) -> dict:
        feats = {}
        for name, p in self.features.items():
            if isinstance(p, NumericPlant):
                feats[name] = {"type": "numerical", "means": dict(p.means)}
                if p.noise is not None:
                    feats[name]["noise"] = p.noise
            else:
                feats[name] = {
                    "type": "categorical",
                    "categories": list(p.categories),
                    "probs": {k: list(v) for k, v in p.probs.items()},
                }
        return {
            "noise": self.noise,
            "seed": self.seed,
            "malformation_rate": self.malformation_rate,
            "weights": dict(self.weights),
            "features": feats,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlantedModel":
        feats = {}
        for name, p in data["features"].items():
            if p.get("type", "numerical") == "numerical":
                feats[name] = NumericPlant({k: float(v) for k, v in p["means"].items()}, p.get("noise"))
            else:
                feats[name] = CategoricalPlant(
                    tuple(p["categories"]), {k: tuple(float(x) for x in v) for k, v in p["probs"].items()}
                )
        return cls(
            features=feats,
            noise=float(data.get("noise", 1.0)),
            seed=int(data.get("seed", 0)),
            malformation_rate=float(data.get("malformation_rate", 0.0)),
            weights={k: float(v) for k, v in data.get("weights", {}).items()},
        )


def plant_from_samples(schema: DatasetSchema, samples: Sequence[RawSample], noise: float = 0.5,
                       seed: int = 0, malformation_rate: float = 0.0) -> PlantedModel:
    """Plant the class-conditional means/frequencies observed in ``samples``.

    Numerical noise is ``noise`` times the feature's pooled standard deviation.
    """
    feats = {}
    for d, f in enumerate(schema.features):
        if f.is_categorical:
            probs = {}
            for c, label in enumerate(schema.class_labels):
                counts = [0] * len(f.categories)
                for s in samples:
                    if s.label == c and s.values[d] is not None:
                        counts[f.categories.index(s.values[d])] += 1
                total = sum(counts)
                probs[label] = tuple(n / total for n in counts) if total else tuple(
                    1 / len(counts) for _ in counts)
            feats[f.name] = CategoricalPlant(f.categories, probs)
        else:
            observed = [s.values[d] for s in samples if s.values[d] is not None]
            mean_all = math.fsum(observed) / len(observed) if observed else 0.0
            std = math.sqrt(math.fsum((v - mean_all) ** 2 for v in observed) / len(observed)) if observed else 1.0
            means = {}
            for c, label in enumerate(schema.class_labels):
                vals = [s.values[d] for s in samples if s.label == c and s.values[d] is not None]
                means[label] = math.fsum(vals) / len(vals) if vals else mean_all
            feats[f.name] = NumericPlant(means, noise * (std or 1.0))
    return PlantedModel(feats, noise=noise, seed=seed, malformation_rate=malformation_rate)


class _HashStream:
    def __init__(self, material: bytes):
        self._root = hashlib.sha256(material).digest()
        self._counter = 0

    def uniform(self) -> float:
        """Uniform draw strictly inside (0, 1)."""
        block = hashlib.sha256(self._root + self._counter.to_bytes(8, "big")).digest()
        self._counter += 1
        return ((int.from_bytes(block[:8], "big") >> 11) + 0.5) / 2.0**53

    def normal(self) -> float:
        u1, u2 = self.uniform(), self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def choice(self, probs: Sequence[float]) -> int:
        u = self.uniform() * math.fsum(probs)
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if u < acc:
                return i
        return max(i for i, p in enumerate(probs) if p > 0)


def _number(x: float):
    x = round(x, 4)
    return int(x) if float(x).is_integer() else x


def _wrap(payload: dict, template_version: str) -> str:
    body = json.dumps(payload)
    if template_version.startswith("alt-format"):
        return f"Here is the dictionary.\n\n```python\nresult = {body}\n```\n"
    return ("Based on prior knowledge about the task, here is the requested dictionary.\n\n"
            f"```json\n{body}\n```\n")


def _malformed(payload: dict) -> str:
    body = json.dumps(payload)
    return f"Let me think about this.\n\n```json\n{body[: max(1, len(body) // 2)]}\n"


def synthetic_oracle(request: ChatRequest, plant: PlantedModel) -> ChatResponse:
    prompt = request.prompt
    for name in prompt.features:
        if name not in plant.features:
            raise UnknownFeatureInPrompt(f"feature {name!r} is not in the planted model")
    stream = _HashStream(f"{plant.seed}\x1f{request.key}".encode("utf-8"))
    malformed = stream.uniform() < plant.malformation_rate

    if prompt.kind is PromptKind.WEIGHT:
        payload = {name: _number(plant.weights.get(name, 1.0)) for name in prompt.features}
    else:
        name = prompt.features[0]
        p = plant.features[name]
        m = prompt.m or 1
        payload = {}
        for label in prompt.class_labels:
            if isinstance(p, NumericPlant):
                if label not in p.means:
                    raise UnknownFeatureInPrompt(f"plant for {name!r} has no class {label!r}")
                scale = plant.noise if p.noise is None else p.noise
                payload[label] = [_number(p.means[label] + scale * stream.normal()) for _ in range(m)]
            else:
                if label not in p.probs:
                    raise UnknownFeatureInPrompt(f"plant for {name!r} has no class {label!r}")
                payload[label] = [p.categories[stream.choice(p.probs[label])] for _ in range(m)]

    text = _malformed(payload) if malformed else _wrap(payload, prompt.template_version)
    # whitespace word counts stand in for tokenizer counts
    return ChatResponse(text, Backend.SYNTHETIC, (len(prompt.text.split()), len(text.split())))


class SyntheticBackend:
    kind = Backend.SYNTHETIC

    def __init__(self, plant: PlantedModel):
        self.plant = plant

    def send(self, request: ChatRequest) -> ChatResponse:
        return synthetic_oracle(request, self.plant)
