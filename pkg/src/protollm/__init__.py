"""Prototype classification of tabular data from LLM-generated, example-free feature priors."""

__version__ = "0.1.0"

from .augment import (
    export_augmented,
    fit_gaussian,
    inverse_normal_cdf,
    quantile_anchors,
    build_regression_augmented,
)
from .dataset import (
    DatasetSchema,
    FeatureSpec,
    RawSample,
    encode,
    few_shot_split,
    fit_scaler,
    load_csv,
    load_schema,
)
from .evaluation import ExperimentConfig, RunReport, auc_binary, auc_multiclass, run_experiment
from .gateway import ChatRequest, ChatResponse, Gateway, ReplayCache
from .parsing import extract_json_block, parse_value_reply, parse_weight_reply, to_generated_value
from .prompts import build_regression_value_prompt, build_value_prompt, build_weight_prompt
from .prototype import (
    FeatureWeights,
    GeneratedValueStore,
    Prototype,
    assemble_prototype,
    build_prototype_component,
    distance,
    normalize_weights,
    predict,
)
from .synthetic import PlantedModel, SyntheticBackend, synthetic_oracle
