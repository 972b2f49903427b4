"""Command-line entry point; one verb per pipeline step.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .augment import (
    build_regression_augmented,
    export_augmented,
    fit_gaussian,
    quantile_anchors,
    write_augmented_csv,
    write_layout,
)
from .dataset import (
    RawSample,
    Scaler,
    drop_sparse_features,
    encode,
    few_shot_split,
    impute,
    load_csv,
    load_schema,
    load_targets,
)
from .errors import ProtoLLMError, ShapeMismatch
from .evaluation import (
    ExperimentConfig,
    GenerationStats,
    generate_values,
    generate_weights,
    load_dataset,
    make_gateway,
    run_experiment,
)
from .gateway import DEFAULT_MODEL, VALUE_TEMPERATURE, WEIGHT_TEMPERATURE
from .prompts import TEMPLATE_SETS, template_version
from .prototype import (
    METRICS,
    FeatureWeights,
    GeneratedValueStore,
    Prototype,
    build_prototypes,
    normalize_weights,
    parse_weight_method,
    pipeline_scaler,
    predict_matrix,
    uniform_weights,
)

logger = logging.getLogger("protollm")


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_manifest(out: Path, verb: str, argv, artifacts, gateway=None, extra=None) -> None:
    manifest = {
        "protollm_version": __version__,
        "verb": verb,
        "argv": list(argv),
        "artifacts": {p.name: _sha256(p) for p in artifacts if p.exists()},
    }
    if gateway is not None:
        manifest["cache_file"] = str(gateway.cache.path) if gateway.cache else None
        manifest["cache_digest"] = gateway.cache.digest() if gateway.cache else None
        manifest["gateway_calls"] = dict(gateway.calls)
        manifest["backend_calls"] = gateway.backend_calls
    manifest.update(extra or {})
    _write_json(out / f"manifest_{verb}.json", manifest)


def _config_from_args(args, **overrides) -> ExperimentConfig:
    values = dict(
        schema=args.schema,
        data=args.data or "",
        k=args.k,
        metric=args.metric,
        weights=args.weights,
        use_weights=args.weights != "off",
        numeric_expansion=args.numeric_expansion,
        template_set=args.template_set,
        model=args.model,
        temperature=args.temperature,
        weight_temperature=args.weight_temperature,
        backend=args.backend,
        cache=args.cache,
        plant=args.plant,
        plant_noise=args.plant_noise,
        malformation_rate=args.malformation_rate,
        drop_threshold=args.drop_threshold,
        jobs=args.jobs,
    )
    values.update(overrides)
    return ExperimentConfig(**values)


def _load_inputs(args):
    schema = load_schema(args.schema)
    samples = []
    if args.data:
        samples = load_csv(args.data, schema)
        samples, schema = drop_sparse_features(samples, schema, args.drop_threshold)
    return schema, samples


def _need(args, *names):
    for name in names:
        if getattr(args, name) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required for '{args.verb}'")


def _gateway_for(args, schema, samples):
    if args.backend == "synthetic" and not args.plant and not samples:
        raise UsageError("--backend synthetic needs --plant or --data")
    return make_gateway(_config_from_args(args), schema, samples)


# --------------------------------------------------------------------------
# verbs


def cmd_generate(args, argv) -> int:
    _need(args, "schema")
    schema, samples = _load_inputs(args)
    gateway = _gateway_for(args, schema, samples)
    stats = GenerationStats()
    store, _ = generate_values(schema, gateway, args.k, model=args.model, temperature=args.temperature,
                               template_set=args.template_set, numeric_expansion=args.numeric_expansion,
                               jobs=args.jobs, stats=stats)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "generated_values.json"
    store.save(path)
    for name, rate in stats.success_rates().items():
        logger.info("parse success %-24s %.2f", name, rate)
    _write_manifest(out, "generate", argv, [path], gateway,
                    {"template_version": template_version(args.template_set),
                     "parse_success": stats.success_rates()})
    return 0


def cmd_weights(args, argv) -> int:
    _need(args, "schema")
    schema, samples = _load_inputs(args)
    gateway = _gateway_for(args, schema, samples)
    raw = generate_weights(schema, gateway, model=args.model, temperature=args.weight_temperature,
                           template_set=args.template_set)
    if raw is None:
        logger.error("the weight reply could not be parsed")
        return 1
    out = Path(args.out)
    path = _write_json(out / "weights_raw.json", raw.tolist())
    _write_manifest(out, "weights", argv, [path], gateway,
                    {"template_version": template_version(args.template_set)})
    return 0


def _resolve_weights(args, n_features) -> FeatureWeights:
    method, temperature = parse_weight_method(args.weights)
    if args.weights == "off" or method == "uniform" or not args.weights_raw:
        if method != "uniform":
            logger.warning("no --weights-raw given; using uniform weights")
        return uniform_weights(n_features)
    raw = np.asarray(json.loads(Path(args.weights_raw).read_text(encoding="utf-8")), dtype=float)
    if raw.shape != (n_features,):
        raise ShapeMismatch(f"weights_raw has {raw.size} entries, schema has {n_features} features")
    return normalize_weights(raw, method, temperature)


def cmd_prototype(args, argv) -> int:
    _need(args, "schema")
    schema, samples = _load_inputs(args)
    store = GeneratedValueStore.load(args.generated, schema) if args.generated else None
    if args.shot > 0 and not samples:
        raise UsageError("--data is required when --shot > 0")
    train = []
    if args.shot > 0:
        train, _ = few_shot_split(samples, schema, args.shot, args.seed)
        train = impute(train, schema, list(train))
    weights = _resolve_weights(args, schema.n_features)
    scaler = pipeline_scaler(store, train, schema)
    protos = build_prototypes(store, train, schema, weights, scaler)
    doc = {
        "scaler": scaler.to_dict(),
        "weights": weights.to_dict(),
        "classes": [{"label": schema.class_labels[p.cls], "vector": p.vector.tolist()} for p in protos],
        "metric": args.metric,
        "layout": [list(b) for b in schema.layout],
        "shot": args.shot,
        "seed": args.seed,
    }
    out = Path(args.out)
    path = _write_json(out / "prototypes.json", doc)
    _write_manifest(out, "prototype", argv, [path])
    return 0


def cmd_predict(args, argv) -> int:
    _need(args, "schema", "data", "prototypes")
    schema = load_schema(args.schema)
    doc = json.loads(Path(args.prototypes).read_text(encoding="utf-8"))
    layout = tuple(tuple(b) for b in doc["layout"])
    if layout != schema.layout:
        raise ShapeMismatch("prototypes.json layout does not match the schema's encoded layout")
    if args.layout:
        side = json.loads(Path(args.layout).read_text(encoding="utf-8"))
        side_layout = tuple((f["offset"], f["length"]) for f in side.get("features", []))
        if side_layout != schema.layout:
            raise ShapeMismatch(f"{args.layout} does not match the schema's encoded layout")
    labels = [c["label"] for c in doc["classes"]]
    if labels != list(schema.class_labels):
        raise ShapeMismatch("prototype classes do not match the schema's class labels")
    protos = [Prototype(c, (), np.asarray(entry["vector"], dtype=float)) for c, entry in enumerate(doc["classes"])]
    weights = FeatureWeights.from_dict(doc["weights"])
    scaler = Scaler.from_dict(doc["scaler"])
    metric = args.metric_override or doc["metric"]
    rows = load_csv(args.data, schema, require_label=False)
    keep = [(i, r) for i, r in enumerate(rows, start=1) if not r.has_missing]
    if len(keep) < len(rows):
        logger.warning("skipping %d rows with missing cells", len(rows) - len(keep))
    if keep:
        X = np.vstack([scaler.apply(encode(r, schema).vector, schema.layout) for _, r in keep])
    else:
        X = np.zeros((0, schema.width))
    probs = predict_matrix(X, protos, weights, metric, schema.layout, schema.n_classes)
    fh = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["row_id"] + [f"p_{c}" for c in range(schema.n_classes)] + ["argmax_label"])
        for (row_id, _), p in zip(keep, probs):
            writer.writerow([row_id] + [repr(float(x)) for x in p] + [schema.class_labels[int(np.argmax(p))]])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_evaluate(args, argv) -> int:
    if args.config:
        config = ExperimentConfig.load(args.config)
        overrides = {}
        for flag in ("backend", "cache", "plant", "jobs"):
            if getattr(args, flag + "_given", False):
                overrides[flag] = getattr(args, flag)
        if overrides:
            config = ExperimentConfig(**(config.__dict__ | overrides))
    else:
        _need(args, "schema", "data")
        config = _config_from_args(args, shots=[args.shot], seeds=[args.seed])
    samples, schema = load_dataset(config)
    gateway = make_gateway(config, schema, samples)
    start = time.perf_counter()
    report = run_experiment(config, gateway)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(report.dumps(), encoding="utf-8")
    print(report.table())
    _write_manifest(out, "evaluate", argv, [path], gateway, {
        "config": config.to_dict(),
        "template_version": template_version(config.template_set),
        "timings": {"llm_seconds": report.llm_seconds, "test_seconds": report.test_seconds,
                    "total_seconds": time.perf_counter() - start},
    })
    if not any(report.aucs[s] for s in report.aucs):
        logger.error("every (shot, seed) run failed")
        return 1
    return 0


def cmd_augment(args, argv) -> int:
    _need(args, "schema", "generated")
    schema = load_schema(args.schema)
    store = GeneratedValueStore.load(args.generated, schema)
    rows = export_augmented(store, schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_augmented_csv(out / "augmented.csv", rows, schema, args.hard_categories)
    write_layout(out / "layout.json", schema)
    _write_manifest(out, "augment", argv, [out / "augmented.csv", out / "layout.json"],
                    extra={"rows": len(rows), "skipped": schema.n_classes * store.K - len(rows)})
    return 0


def cmd_regress_augment(args, argv) -> int:
    _need(args, "schema", "data")
    schema = load_schema(args.schema)
    rows = load_csv(args.data, schema, require_label=False)
    targets = load_targets(args.data, schema.target_column)
    mu, sigma = fit_gaussian([t for t in targets if t is not None])
    anchors = quantile_anchors(mu, sigma)
    if args.generated:
        store = GeneratedValueStore.load(args.generated, schema)
        gateway = None
    else:
        plant_samples = []
        if args.backend == "synthetic" and not args.plant:
            # label each row by its nearest anchor so the plant reflects the data
            for r, t in zip(rows, targets):
                if t is not None:
                    c = int(np.argmin([abs(t - a) for a in anchors.anchors]))
                    plant_samples.append(RawSample(r.values, c))
        gateway = _gateway_for(args, schema, plant_samples)
        store, _ = generate_values(schema, gateway, args.k, model=args.model, temperature=args.temperature,
                                   template_set=args.template_set, numeric_expansion=args.numeric_expansion,
                                   regression=True, jobs=args.jobs)
    aug = build_regression_augmented(store, anchors, schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_augmented_csv(out / "augmented.csv", aug, schema, args.hard_categories)
    write_layout(out / "layout.json", schema)
    _write_manifest(out, "regress-augment", argv, [out / "augmented.csv", out / "layout.json"], gateway,
                    {"mu": mu, "sigma": sigma, "anchors": list(anchors.anchors), "q": list(anchors.q)})
    return 0


VERBS = {
    "generate": cmd_generate,
    "weights": cmd_weights,
    "prototype": cmd_prototype,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "augment": cmd_augment,
    "regress-augment": cmd_regress_augment,
}


class _Given(argparse.Action):
    """Store the value and remember that the flag was passed explicitly."""

    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        setattr(namespace, self.dest + "_given", True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schema")
    common.add_argument("--data")
    common.add_argument("--cache", action=_Given)
    common.add_argument("--backend", choices=["remote", "synthetic", "replay"], default="remote", action=_Given)
    common.add_argument("--plant", action=_Given, help="planted-model JSON for the synthetic backend")
    common.add_argument("--plant-noise", type=float, default=0.5)
    common.add_argument("--malformation-rate", type=float, default=0.0)
    common.add_argument("--model", default=DEFAULT_MODEL)
    common.add_argument("--temperature", type=float, default=VALUE_TEMPERATURE)
    common.add_argument("--weight-temperature", type=float, default=WEIGHT_TEMPERATURE)
    common.add_argument("--k", type=int, default=10)
    common.add_argument("--shot", type=int, default=0)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--metric", choices=METRICS, default="euclidean")
    common.add_argument("--weights", default="sum", help="sum | softmax:<T> | minmax | uniform | off")
    common.add_argument("--weights-raw", help="weights_raw.json from the 'weights' verb")
    common.add_argument("--template-set", choices=TEMPLATE_SETS, default="original")
    common.add_argument("--numeric-expansion", action="store_true")
    common.add_argument("--jobs", type=int, default=1, action=_Given)
    common.add_argument("--drop-threshold", type=float, default=1.0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="protollm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    sub.add_parser("generate", parents=[common], help="query feature values and write generated_values.json")
    sub.add_parser("weights", parents=[common], help="query feature importance and write weights_raw.json")
    p = sub.add_parser("prototype", parents=[common], help="build prototypes.json for one shot/seed")
    p.add_argument("--generated")
    p = sub.add_parser("predict", parents=[common], help="score a CSV against prototypes.json")
    p.add_argument("--prototypes")
    p.add_argument("--layout")
    p.add_argument("--output", help="predictions CSV (default: stdout)")
    p.add_argument("--metric-override", choices=METRICS)
    p = sub.add_parser("evaluate", parents=[common], help="run a seeded experiment and write report.json")
    p.add_argument("--config")
    p = sub.add_parser("augment", parents=[common], help="export generated rows as augmented.csv")
    p.add_argument("--generated")
    p.add_argument("--hard-categories", action="store_true")
    p = sub.add_parser("regress-augment", parents=[common], help="regression augmentation with quantile targets")
    p.add_argument("--generated")
    p.add_argument("--hard-categories", action="store_true")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return VERBS[args.verb](args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"protollm: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"protollm: error: {exc}", file=sys.stderr)
        return 2
    except ProtoLLMError as exc:
        print(f"protollm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"protollm: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
