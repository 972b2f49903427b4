"""End-to-end experiments: generate values and weights, build prototypes, score AUC."""

from __future__ import annotations

import json
import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import (
    DatasetSchema,
    drop_incomplete,
    drop_sparse_features,
    encode_matrix,
    few_shot_split,
    impute,
    load_csv,
    load_schema,
)
from .errors import OneClassOnly, ParseError, ProtoLLMError
from .gateway import (
    DEFAULT_MODEL,
    VALUE_TEMPERATURE,
    WEIGHT_TEMPERATURE,
    ChatRequest,
    Gateway,
    RemoteBackend,
    ReplayCache,
    RetryPolicy,
)
from .parsing import (
    expand_generated_values,
    extract_json_block,
    parse_value_reply,
    parse_weight_reply,
    to_generated_value,
)
from .prompts import build_regression_value_prompt, build_value_prompt, build_weight_prompt
from .prototype import (
    FeatureWeights,
    GeneratedValueStore,
    build_prototypes,
    normalize_weights,
    parse_weight_method,
    pipeline_scaler,
    predict_matrix,
    uniform_weights,
)
from .synthetic import PlantedModel, SyntheticBackend, plant_from_samples

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# AUC


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc_binary(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for tied scores."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both positive and negative examples")
    ranks = _midranks(scores)
    u = math.fsum(ranks[labels == 1]) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def auc_multiclass(probs, labels) -> float:
    """Macro-averaged one-vs-rest AUC."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(int)
    aucs = []
    for c in range(probs.shape[1]):
        if not np.any(labels == c):
            raise OneClassOnly(f"class {c} does not occur in the labels")
        aucs.append(auc_binary(probs[:, c], (labels == c).astype(int)))
    return math.fsum(aucs) / len(aucs)


def auc_score(probs: np.ndarray, labels) -> float:
    if probs.shape[1] == 2:
        return auc_binary(probs[:, 1], labels)
    return auc_multiclass(probs, labels)


# --------------------------------------------------------------------------
# generation phase


@dataclass
class GenerationStats:
    attempted: Counter = field(default_factory=Counter)  # per feature name
    parsed: Counter = field(default_factory=Counter)
    prompt_tokens: int = 0
    completion_tokens: int = 0
    weight_parsed: Optional[bool] = None

    def success_rates(self) -> dict:
        return {name: self.parsed[name] / n for name, n in self.attempted.items() if n}

    def add_tokens(self, counts) -> None:
        if counts:
            self.prompt_tokens += counts[0]
            self.completion_tokens += counts[1]


def generate_values(schema: DatasetSchema, gateway: Gateway, K: int, *, model: str = DEFAULT_MODEL,
                    temperature: float = VALUE_TEMPERATURE, template_set: str = "original",
                    numeric_expansion: bool = False, regression: bool = False, jobs: int = 1,
                    stats: Optional[GenerationStats] = None):
    """Issue the K x D value queries and collect the parsed generated values.

    A query whose reply cannot be parsed contributes nothing; its feature's
    success rate drops accordingly.
    """
    stats = stats if stats is not None else GenerationStats()
    build = build_regression_value_prompt if regression else build_value_prompt
    prompts = [build(schema, d, template_set) for d in range(schema.n_features)]
    jobs_list = [(d, k) for d in range(schema.n_features) for k in range(1, K + 1)]

    def run(item):
        d, k = item
        resp = gateway.complete(ChatRequest(model, temperature, prompts[d], k))
        try:
            reply = parse_value_reply(extract_json_block(resp.text), schema, d, prompts[d].class_labels)
        except ParseError as exc:
            logger.warning("feature %r query %d: unparseable reply (%s)", schema.features[d].name, k, exc)
            return d, k, resp, None
        return d, k, resp, reply

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(item) for item in jobs_list]

    store = GeneratedValueStore(schema, K, expanded=numeric_expansion)
    for d, k, resp, reply in results:
        name = schema.features[d].name
        stats.attempted[name] += 1
        stats.add_tokens(resp.token_counts)
        if reply is None:
            continue
        stats.parsed[name] += 1
        for c in range(schema.n_classes):
            if numeric_expansion:
                for value in expand_generated_values(reply, schema, d, c, k):
                    store.add(value)
            else:
                store.add(to_generated_value(reply, schema, d, c, k))
    return store, stats


def generate_weights(schema: DatasetSchema, gateway: Gateway, *, model: str = DEFAULT_MODEL,
                     temperature: float = WEIGHT_TEMPERATURE, template_set: str = "original",
                     stats: Optional[GenerationStats] = None) -> Optional[np.ndarray]:
    """Single weight query; ``None`` when the reply is unusable."""
    resp = gateway.complete(ChatRequest(model, temperature, build_weight_prompt(schema, template_set), 1))
    if stats is not None:
        stats.add_tokens(resp.token_counts)
    try:
        raw = parse_weight_reply(extract_json_block(resp.text), schema)
    except ParseError as exc:
        logger.warning("weight reply unusable (%s)", exc)
        if stats is not None:
            stats.weight_parsed = False
        return None
    if stats is not None:
        stats.weight_parsed = True
    return raw


# --------------------------------------------------------------------------
# inference phase


def evaluate_split(schema: DatasetSchema, samples, store: Optional[GeneratedValueStore],
                   weights: FeatureWeights, shot: int, seed: int, metric: str = "euclidean"):
    """Split, build prototypes and score the test rows. Returns ``(probs, labels)``."""
    train, test = few_shot_split(samples, schema, shot, seed)
    if shot == 0:
        test = drop_incomplete(test)
    else:
        pool = list(train)
        train = impute(train, schema, pool)
        test = impute(test, schema, pool)
    scaler = pipeline_scaler(store, train, schema)
    protos = build_prototypes(store, train, schema, weights, scaler)
    X = encode_matrix(test, schema)
    X = np.vstack([scaler.apply(x, schema.layout) for x in X]) if len(X) else X
    probs = predict_matrix(X, protos, weights, metric, schema.layout, schema.n_classes)
    return probs, np.array([s.label for s in test], dtype=int)


# --------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentConfig:
    schema: str
    data: str
    shots: list = field(default_factory=lambda: [0, 4, 8, 16])
    seeds: list = field(default_factory=lambda: list(range(15)))
    k: int = 10
    metric: str = "euclidean"
    weights: str = "sum"
    use_weights: bool = True
    numeric_expansion: bool = False
    template_set: str = "original"
    model: str = DEFAULT_MODEL
    temperature: float = VALUE_TEMPERATURE
    weight_temperature: float = WEIGHT_TEMPERATURE
    backend: str = "remote"
    cache: Optional[str] = None
    plant: Optional[str] = None
    plant_noise: float = 0.5
    plant_seed: int = 0
    malformation_rate: float = 0.0
    drop_threshold: float = 0.2
    jobs: int = 1
    max_retries: int = 3
    backoff: float = 1.0

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.shots:
            raise ValueError("shots must be non-empty")
        if self.k < 0 or any(s < 0 for s in self.shots):
            raise ValueError("k and shots must be non-negative")
        parse_weight_method(self.weights)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in data.items():
            name = key.replace("-", "_").lower()
            if name not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[name] = value
        if base_dir is not None:
            for name in ("schema", "data", "cache", "plant"):
                if kwargs.get(name) is not None:
                    kwargs[name] = str(Path(base_dir) / kwargs[name])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {f.name.replace("_", "-"): getattr(self, f.name) for f in fields(self)}


@dataclass
class RunReport:
    dataset: str
    config: dict
    aucs: dict  # shot -> {seed: auc}
    failed: list  # [{"shot", "seed", "error"}]
    parse_success: dict
    weight_parsed: Optional[bool]
    weights: Optional[dict]
    token_counts: dict
    gateway_calls: dict
    llm_seconds: float = 0.0
    test_seconds: float = 0.0

    def summary(self) -> dict:
        out = {}
        for shot, per_seed in self.aucs.items():
            vals = list(per_seed.values())
            if vals:
                mean = math.fsum(vals) / len(vals)
                std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))
            else:
                mean = std = None
            out[shot] = {"mean": mean, "std": std, "n": len(vals)}
        return out

    def to_json(self) -> dict:
        """Deterministic content only; wall-clock timings are kept out."""
        summary = self.summary()
        return {
            "dataset": self.dataset,
            "config": self.config,
            "shots": {
                str(shot): {
                    "mean": summary[shot]["mean"],
                    "std": summary[shot]["std"],
                    "per_seed": {str(seed): auc for seed, auc in per_seed.items()},
                }
                for shot, per_seed in self.aucs.items()
            },
            "failed": self.failed,
            "parse_success": self.parse_success,
            "weight_parsed": self.weight_parsed,
            "weights": self.weights,
            "token_counts": self.token_counts,
            "gateway_calls": self.gateway_calls,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        summary = self.summary()
        width = max(len(self.dataset), 13)
        lines = [f"{'shot':>6} | {self.dataset:>{width}}", "-" * (9 + width)]
        for shot in self.aucs:
            s = summary[shot]
            cell = "failed" if s["mean"] is None else f"{100 * s['mean']:.2f}±{100 * s['std']:.2f}"
            lines.append(f"{shot:>6} | {cell:>{width}}")
        return "\n".join(lines)


def make_gateway(config: ExperimentConfig, schema: DatasetSchema = None, samples=None) -> Gateway:
    cache = ReplayCache(config.cache) if config.cache else None
    if config.backend == "remote":
        backend = RemoteBackend.from_env()
    elif config.backend == "synthetic":
        if config.plant:
            plant = PlantedModel.from_dict(json.loads(Path(config.plant).read_text(encoding="utf-8")))
            if config.malformation_rate:
                plant = PlantedModel(plant.features, plant.noise, plant.seed, config.malformation_rate, plant.weights)
        else:
            plant = plant_from_samples(schema, samples, config.plant_noise, config.plant_seed,
                                       config.malformation_rate)
        backend = SyntheticBackend(plant)
    elif config.backend == "replay":
        backend = None
    else:
        raise ValueError(f"unknown backend {config.backend!r}")
    return Gateway(backend, cache, RetryPolicy(config.max_retries, config.backoff))


def load_dataset(config: ExperimentConfig):
    schema = load_schema(config.schema)
    samples = load_csv(config.data, schema)
    return drop_sparse_features(samples, schema, config.drop_threshold)


def run_experiment(config: ExperimentConfig, gateway: Optional[Gateway] = None) -> RunReport:
    samples, schema = load_dataset(config)
    gateway = gateway or make_gateway(config, schema, samples)
    calls_before = Counter(gateway.calls)
    method, temperature = parse_weight_method(config.weights)
    query_weights = config.use_weights and config.weights != "off" and method != "uniform"

    t0 = time.perf_counter()
    stats = GenerationStats()
    store = None
    if config.k > 0:
        store, _ = generate_values(
            schema, gateway, config.k, model=config.model, temperature=config.temperature,
            template_set=config.template_set, numeric_expansion=config.numeric_expansion,
            jobs=config.jobs, stats=stats)
    raw = None
    if query_weights:
        raw = generate_weights(schema, gateway, model=config.model, temperature=config.weight_temperature,
                               template_set=config.template_set, stats=stats)
    if raw is None:
        weights = uniform_weights(schema.n_features)
    else:
        weights = normalize_weights(raw, method, temperature)
    generation_calls = gateway.total_calls - sum(calls_before.values())
    t1 = time.perf_counter()

    aucs = {shot: {} for shot in config.shots}
    failed = []
    with gateway.frozen():
        for seed in config.seeds:
            for shot in config.shots:
                try:
                    probs, labels = evaluate_split(schema, samples, store, weights, shot, seed, config.metric)
                    aucs[shot][seed] = auc_score(probs, labels)
                except ProtoLLMError as exc:
                    logger.error("shot %d seed %d failed: %s", shot, seed, exc)
                    failed.append({"shot": shot, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
    t2 = time.perf_counter()

    value_calls = gateway.calls["categorical_value"] + gateway.calls["numerical_value"] - (
        calls_before["categorical_value"] + calls_before["numerical_value"])
    return RunReport(
        dataset=schema.name,
        config=config.to_dict(),
        aucs=aucs,
        failed=failed,
        parse_success=stats.success_rates(),
        weight_parsed=stats.weight_parsed,
        weights=weights.to_dict(),
        token_counts={"prompt": stats.prompt_tokens, "completion": stats.completion_tokens},
        gateway_calls={
            "value": value_calls,
            "weight": gateway.calls["weight"] - calls_before["weight"],
            "generation_total": generation_calls,
            "test_phase": gateway.total_calls - sum(calls_before.values()) - generation_calls,
        },
        llm_seconds=t1 - t0,
        test_seconds=t2 - t1,
    )
