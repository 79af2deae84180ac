import json
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional

import jsonschema

from errors import ConfigurationError

TEXT_COLUMN = "htmlContent"
LABEL_COLUMN = "isPhish"
HISTOGRAM_BUCKET = 1000

MIN_TOKEN_LEN = 2
EMIT_BIGRAMS = True
STRIP_MARKUP = True

MAX_VOCAB = 5000
MAX_LEN = 200
EMBED_DIM = 100
OOV_INIT_LIMIT = 0.05

CONV_FILTERS = 128
KERNEL_SIZE = 5
POOL_SIZE = 5
NUM_HEADS = 4
KEY_DIM = 64
LSTM_UNITS = 128
DROPOUT_RATE = 0.3
VARIANTS = ("cnn", "lstm", "cnn_lstm", "cnn_lstm_attn")
DEFAULT_VARIANT = "cnn_lstm_attn"

EPOCHS = 20
BATCH_SIZE = 32
LEARNING_RATE = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
GRAD_CLIP_NORM = 5.0
K_FOLDS = 5
VALIDATION_FRACTION = 0.1
SEED = 42

CHECKPOINT_NAME = "model.ckpt.json"
HISTORY_NAME = "history.csv"
AGGREGATE_NAME = "aggregate.json"
CORRELATION_NAME = "correlation.json"
TOKENS_NAME = "tokens.jsonl"

INPUT_PATHS = ("corpus", "embeddings", "checkpoint")


@dataclass
class RunConfig:
    """Flat union of every setting a CLI run can touch.

    Mirrors the JSON config file key for key; flags override file values.
    """

    corpus: Optional[str] = None
    embeddings: Optional[str] = None
    checkpoint: Optional[str] = None
    out_dir: Optional[str] = None

    text_column: str = TEXT_COLUMN
    label_column: str = LABEL_COLUMN
    bucket_width: int = HISTOGRAM_BUCKET

    stop_words: Optional[List[str]] = None
    min_token_len: int = MIN_TOKEN_LEN
    emit_bigrams: bool = EMIT_BIGRAMS
    strip_markup: bool = STRIP_MARKUP

    max_vocab: int = MAX_VOCAB
    max_len: int = MAX_LEN
    embed_dim: int = EMBED_DIM

    variant: str = DEFAULT_VARIANT
    conv_filters: int = CONV_FILTERS
    kernel_size: int = KERNEL_SIZE
    pool_size: int = POOL_SIZE
    num_heads: int = NUM_HEADS
    key_dim: int = KEY_DIM
    lstm_units: int = LSTM_UNITS
    dropout: float = DROPOUT_RATE
    conv_bias_inside_relu: bool = False
    forget_bias_one: bool = True

    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    grad_clip_norm: Optional[float] = GRAD_CLIP_NORM
    class_weighting: bool = True
    k: int = K_FOLDS
    validation_fraction: float = VALIDATION_FRACTION
    seed: int = SEED
    jobs: int = 1

    def validate(self, required_paths=()) -> "RunConfig":
        for name in required_paths:
            path = getattr(self, name)
            if not path:
                raise ConfigurationError(f"{name} is required")
            if name in INPUT_PATHS and not os.path.exists(path):
                raise ConfigurationError(f"{name} not found: {path}")
        if self.embeddings and not os.path.exists(self.embeddings):
            raise ConfigurationError(f"embeddings not found: {self.embeddings}")
        try:
            jsonschema.validate(asdict(self), RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigurationError(_schema_message(e)) from None
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_INT_MIN_1 = {"type": "integer", "minimum": 1}
_PATH = {"type": ["string", "null"]}

RUN_CONFIG_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "corpus": _PATH,
        "embeddings": _PATH,
        "checkpoint": _PATH,
        "out_dir": _PATH,
        "text_column": {"type": "string", "minLength": 1},
        "label_column": {"type": "string", "minLength": 1},
        "bucket_width": _INT_MIN_1,
        "stop_words": {"type": ["array", "null"], "items": {"type": "string"}},
        "min_token_len": _INT_MIN_1,
        "emit_bigrams": {"type": "boolean"},
        "strip_markup": {"type": "boolean"},
        "max_vocab": _INT_MIN_1,
        "max_len": _INT_MIN_1,
        "embed_dim": _INT_MIN_1,
        "variant": {"enum": list(VARIANTS)},
        "conv_filters": _INT_MIN_1,
        "kernel_size": _INT_MIN_1,
        "pool_size": _INT_MIN_1,
        "num_heads": _INT_MIN_1,
        "key_dim": _INT_MIN_1,
        "lstm_units": _INT_MIN_1,
        "dropout": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "conv_bias_inside_relu": {"type": "boolean"},
        "forget_bias_one": {"type": "boolean"},
        "epochs": _INT_MIN_1,
        "batch_size": _INT_MIN_1,
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "adam_beta1": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_beta2": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "adam_eps": {"type": "number", "exclusiveMinimum": 0},
        "grad_clip_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "class_weighting": {"type": "boolean"},
        "k": {"type": "integer", "minimum": 2},
        "validation_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "jobs": _INT_MIN_1,
    },
}


def _schema_message(error: jsonschema.ValidationError) -> str:
    where = ".".join(str(p) for p in error.absolute_path) or "config"
    return f"{where}: {error.message}"


def load_run_config(path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read the flat JSON config at ``path`` (if any) and apply ``overrides``.

    ``None`` override values mean "flag not given" and leave the file value alone.
    """
    values: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ConfigurationError(f"config not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid JSON: {e.msg} at byte {e.pos}") from None
        try:
            jsonschema.validate(values, RUN_CONFIG_SCHEMA)
        except jsonschema.ValidationError as e:
            raise ConfigurationError(_schema_message(e)) from None

    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value

    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**values)

