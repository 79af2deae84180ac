import hashlib
import json
import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config import (ADAM_BETA1, ADAM_BETA2, ADAM_EPS, BATCH_SIZE, DEFAULT_VARIANT, EPOCHS, GRAD_CLIP_NORM, K_FOLDS,
                    LEARNING_RATE, MAX_VOCAB, SEED, VALIDATION_FRACTION, VARIANTS)
from corpus import Document, plan_folds, stratified_holdout
from errors import (CheckpointFormatError, CheckpointVersionError, ConfigurationError, FrozenEmbeddingError,
                    NumericFaultError)
from layers import ModelConfig, Params, hybrid_forward, init_params, token_attention
from metrics import MetricsReport, aggregate, evaluate_probabilities, metric_correlation, predict_label
from preprocess import PreprocessConfig, TokenSequence, preprocess
from utils import atomic_write_text, derive_seed, make_rng
from vocab_embed import (EmbeddingTable, EncodedSequence, Vocabulary, assemble_embedding, build_vocabulary, encode)

logger = logging.getLogger("training")

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    adam_beta1: float = ADAM_BETA1
    adam_beta2: float = ADAM_BETA2
    adam_eps: float = ADAM_EPS
    k: int = K_FOLDS
    seed: int = SEED
    variant: str = DEFAULT_VARIANT
    class_weighting: bool = True
    grad_clip_norm: Optional[float] = GRAD_CLIP_NORM
    validation_fraction: float = VALIDATION_FRACTION
    max_vocab: int = MAX_VOCAB
    progress: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be in [0, 1), got {getattr(self, name)}")
        if not self.adam_eps > 0:
            raise ConfigurationError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.k < 2:
            raise ConfigurationError(f"k must be >= 2, got {self.k}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant '{self.variant}'")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ConfigurationError(f"grad_clip_norm must be positive or None, got {self.grad_clip_norm}")
        if not 0 <= self.validation_fraction < 1:
            raise ConfigurationError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.max_vocab < 1:
            raise ConfigurationError(f"max_vocab must be >= 1, got {self.max_vocab}")

    def to_dict(self):
        payload = asdict(self)
        payload.pop("progress")
        return payload

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class Example:
    id: int
    encoded: EncodedSequence
    label: int


@dataclass
class DatasetSplit:
    train: List[Example]
    validation: List[Example] = field(default_factory=list)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: Optional[float]
    val_acc: Optional[float]


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


@dataclass
class TrainResult:
    params: Params
    history: List[EpochRecord]
    model_config: ModelConfig


def cross_entropy(probs, label: int, class_weight: float = 1.0) -> float:
    """-w * log(p[label]) with p clamped at 1e-12."""
    return -class_weight * float(np.log(max(float(probs[label]), PROB_FLOOR)))


def cross_entropy_grad(probs, label: int, class_weight: float = 1.0) -> np.ndarray:
    grad = np.zeros(len(probs))
    p = float(probs[label])
    if p > PROB_FLOOR:
        grad[label] = -class_weight / p
    return grad


def class_weights(corpus: Sequence) -> Dict[int, float]:
    """Inverse-frequency weights N / (2 * N_c); accepts documents or bare labels."""
    labels = [getattr(d, "label", d) for d in corpus]
    n = len(labels)
    counts = {c: sum(1 for y in labels if y == c) for c in (0, 1)}
    if counts[0] == 0 or counts[1] == 0:
        raise ConfigurationError("class weighting needs both classes in the training data")
    return {c: n / (2.0 * counts[c]) for c in (0, 1)}


def clip_gradients(grads: Params, max_norm: Optional[float]) -> Tuple[Params, float]:
    """Scale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}, norm


def adam_step(params: Params, grads: Params, state: AdamState, config: TrainConfig) -> Tuple[Params, AdamState]:
    """Bias-corrected Adam update, applied in place; t advances once per call."""
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params[name] -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    return params, state


def _batch_gradient(batch: List[Example], table, params, model_config, weights, rng):
    total: Params = {}
    loss = 0.0
    correct = 0
    scale = 1.0 / len(batch)
    for example in batch:
        out = hybrid_forward(example.encoded, table, params, model_config, training=True, rng=rng)
        weight = weights[example.label]
        loss += cross_entropy(out.probs, example.label, weight)
        correct += int(predict_label(out.probs) == example.label)
        grads = out.backward(cross_entropy_grad(out.probs, example.label, weight) * scale)
        for name, g in grads.items():
            if name in total:
                total[name] += g
            else:
                total[name] = g.copy()
    return total, loss, correct


def predict_probs(examples: Sequence[Example], table: EmbeddingTable, params: Params,
                  model_config: ModelConfig) -> List[np.ndarray]:
    return [hybrid_forward(e.encoded, table, params, model_config).probs for e in examples]


def _evaluate_loss(examples, table, params, model_config, weights):
    if not examples:
        return None, None
    probs = predict_probs(examples, table, params, model_config)
    loss = sum(cross_entropy(p, e.label, weights[e.label]) for p, e in zip(probs, examples)) / len(examples)
    acc = sum(int(predict_label(p) == e.label) for p, e in zip(probs, examples)) / len(examples)
    return float(loss), float(acc)


def train(split: DatasetSplit, config: TrainConfig, vocab: Vocabulary, table: EmbeddingTable,
          model_config: Optional[ModelConfig] = None, tag: str = "main") -> TrainResult:
    """Mini-batch Adam over ``split.train``; ``split.validation`` only feeds the history.

    ``tag`` namespaces the init/shuffle/dropout seeds so folds differ but stay reproducible.
    """
    if not split.train:
        raise ConfigurationError("training split is empty")
    model_config = replace(model_config or ModelConfig(), variant=config.variant)
    if len(vocab) != len(table):
        raise ConfigurationError(f"vocabulary has {len(vocab)} ids but the table has {len(table)} rows")

    params = init_params(model_config, make_rng(config.seed, f"init/{tag}"))
    shuffle_rng = make_rng(config.seed, f"shuffle/{tag}")
    dropout_rng = make_rng(config.seed, f"dropout/{tag}")
    weights = class_weights(split.train) if config.class_weighting else {0: 1.0, 1: 1.0}
    state = AdamState()
    history: List[EpochRecord] = []
    n = len(split.train)

    epochs = tqdm(range(1, config.epochs + 1), desc=f"train[{tag}]", disable=not config.progress)
    for epoch in epochs:
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for batch_no, start in enumerate(range(0, n, config.batch_size), start=1):
            batch = [split.train[i] for i in order[start:start + config.batch_size]]
            try:
                grads, loss, correct = _batch_gradient(batch, table, params, model_config, weights, dropout_rng)
            except NumericFaultError as e:
                raise NumericFaultError(e.message, epoch=epoch, batch=batch_no) from None
            if not np.isfinite(loss):
                raise NumericFaultError("loss is not finite", epoch=epoch, batch=batch_no)
            grads, norm = clip_gradients(grads, config.grad_clip_norm)
            adam_step(params, grads, state, config)
            epoch_loss += loss
            epoch_correct += correct
            logger.debug(f"[{tag}] epoch {epoch} batch {batch_no}: loss {loss / len(batch):.6f}, grad norm {norm:.4f}")

        val_loss, val_acc = _evaluate_loss(split.validation, table, params, model_config, weights)
        record = EpochRecord(epoch, epoch_loss / n, epoch_correct / n, val_loss, val_acc)
        history.append(record)
        logger.info(
            f"[{tag}] epoch {epoch}/{config.epochs}: train loss {record.train_loss:.4f} acc {record.train_acc:.4f}"
            + (f", val loss {val_loss:.4f} acc {val_acc:.4f}" if val_loss is not None else "")
        )
    return TrainResult(params=params, history=history, model_config=model_config)


def history_frame(history: List[EpochRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in history],
                        columns=["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])


def table_digest(table: EmbeddingTable) -> str:
    return hashlib.sha256(np.ascontiguousarray(table.matrix).tobytes()).hexdigest()


def _examples(docs: Sequence[Document], tokens: Dict[int, TokenSequence], vocab: Vocabulary, T: int) -> List[Example]:
    return [Example(d.id, encode(tokens[d.id], vocab, T), d.label) for d in docs]


@dataclass
class FoldResult:
    fold: int
    report: MetricsReport
    history: List[EpochRecord]
    train_ids: List[int]
    val_ids: List[int]
    test_ids: List[int]
    vocabulary: Vocabulary
    embedding_digest: str
    seconds: float


@dataclass
class CrossValidationResult:
    variant: str
    folds: List[FoldResult]
    aggregate: Dict[str, Dict[str, Optional[float]]]
    correlation: Dict[str, Dict[str, Optional[float]]]

    def to_dict(self):
        return {
            "variant": self.variant,
            "folds": [dict(fold=f.fold, n_train=len(f.train_ids), n_validation=len(f.val_ids),
                           n_test=len(f.test_ids), **f.report.to_dict()) for f in self.folds],
            "aggregate": self.aggregate,
        }


def _run_fold(fold: int, corpus: List[Document], test_ids: List[int], tokens: Dict[int, TokenSequence],
              config: TrainConfig, model_config: ModelConfig, pretrained: Dict[str, np.ndarray]) -> FoldResult:
    started = time.perf_counter()
    held_out = set(test_ids)
    train_docs = [d for d in corpus if d.id not in held_out]
    test_docs = [d for d in corpus if d.id in held_out]
    fit_docs, val_docs = stratified_holdout(train_docs, config.validation_fraction,
                                            derive_seed(config.seed, f"validation/{fold}"))

    vocab = build_vocabulary([tokens[d.id] for d in fit_docs], config.max_vocab)
    table = assemble_embedding(vocab, pretrained, model_config.embed_dim,
                               derive_seed(config.seed, f"embedding/{fold}"))
    digest = table_digest(table)
    T = model_config.max_len
    split = DatasetSplit(_examples(fit_docs, tokens, vocab, T), _examples(val_docs, tokens, vocab, T))
    result = train(split, config, vocab, table, model_config, tag=f"fold{fold}")
    if table_digest(table) != digest:
        raise FrozenEmbeddingError(f"fold {fold}: embedding table changed during training")

    test_examples = _examples(test_docs, tokens, vocab, T)
    probs = predict_probs(test_examples, table, result.params, result.model_config)
    report = evaluate_probabilities(probs, [e.label for e in test_examples], [e.id for e in test_examples])
    seconds = time.perf_counter() - started
    logger.info(
        f"Fold {fold}: train {len(fit_docs)}, validation {len(val_docs)}, test {len(test_docs)}; "
        f"accuracy {report.accuracy:.4f}, f1 {report.f1:.4f}, auc {report.auc}"
    )
    return FoldResult(fold, report, result.history, [d.id for d in fit_docs], [d.id for d in val_docs],
                      [d.id for d in test_docs], vocab, digest, seconds)


def cross_validate(corpus: List[Document], config: TrainConfig, model_config: Optional[ModelConfig] = None,
                   preprocess_config: Optional[PreprocessConfig] = None,
                   pretrained: Optional[Dict[str, np.ndarray]] = None, jobs: int = 1) -> CrossValidationResult:
    """Stratified k-fold: per fold, rebuild vocabulary and embedding table from the
    training documents, train, and score the held-out fold."""
    model_config = replace(model_config or ModelConfig(), variant=config.variant)
    preprocess_config = preprocess_config or PreprocessConfig()
    pretrained = pretrained or {}
    plan = plan_folds(corpus, config.k, config.seed)
    # preprocessing is per document and stateless, so it is shared by all folds
    tokens = {d.id: preprocess(d.text, preprocess_config) for d in corpus}

    logger.info(f"Cross-validating '{config.variant}' with k={config.k} on {len(corpus)} documents (jobs={jobs})")
    fold_args = [(f, corpus, plan.test_ids(f), tokens, config, model_config, pretrained) for f in range(config.k)]
    if jobs > 1:
        folds = Parallel(n_jobs=jobs)(delayed(_run_fold)(*args) for args in fold_args)
    else:
        folds = [_run_fold(*args) for args in fold_args]

    reports = [f.report for f in folds]
    return CrossValidationResult(
        variant=config.variant,
        folds=list(folds),
        aggregate=aggregate(reports),
        correlation=metric_correlation(reports),
    )


def compare_variants(corpus: List[Document], config: TrainConfig, model_config: Optional[ModelConfig] = None,
                     preprocess_config: Optional[PreprocessConfig] = None,
                     pretrained: Optional[Dict[str, np.ndarray]] = None, jobs: int = 1,
                     variants: Sequence[str] = VARIANTS) -> Tuple[Dict[str, dict], Dict[str, float]]:
    """Cross-validate every variant on the same folds.

    Returns (metric rows by variant, mean seconds per fold by variant); timings
    are kept apart so the metric rows stay reproducible.
    """
    rows, timing = OrderedDict(), OrderedDict()
    for variant in variants:
        result = cross_validate(corpus, replace(config, variant=variant), model_config, preprocess_config,
                                pretrained, jobs)
        rows[variant] = {name: stats["mean"] for name, stats in result.aggregate.items()}
        timing[variant] = float(np.mean([f.seconds for f in result.folds]))
    return rows, timing


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    preprocess_config: PreprocessConfig
    vocabulary: Vocabulary
    table: EmbeddingTable
    params: Params
    history: List[EpochRecord]
    format_version: int = CHECKPOINT_VERSION

    def to_dict(self):
        return {
            "format_version": self.format_version,
            "config": {
                "model": self.model_config.to_dict(),
                "train": self.train_config.to_dict(),
                "preprocess": self.preprocess_config.to_dict(),
            },
            "vocabulary": self.vocabulary.to_dict(),
            "embedding": _tensor_payload(self.table.matrix),
            "params": {name: _tensor_payload(value) for name, value in self.params.items()},
            "history": [asdict(r) for r in self.history],
        }


def _tensor_payload(value: np.ndarray):
    return {"shape": list(value.shape), "data": value.tolist()}


def _tensor_from(payload) -> np.ndarray:
    return np.array(payload["data"], dtype=np.float64).reshape(payload["shape"])


def save_checkpoint(path: str, checkpoint: Checkpoint):
    atomic_write_text(path, json.dumps(checkpoint.to_dict(), sort_keys=True, allow_nan=False))
    logger.info(f"Checkpoint saved to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if not raw.strip():
        raise CheckpointFormatError(f"{path} is empty", offset=0)
    try:
        payload = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as e:
        raise CheckpointFormatError(f"{path} is not UTF-8", offset=e.start) from None
    except json.JSONDecodeError as e:
        raise CheckpointFormatError(f"{path} is not valid JSON: {e.msg}", offset=e.pos) from None
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointFormatError(f"{path} has no format_version")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint format_version {version!r}")
    try:
        config = payload["config"]
        model_config = ModelConfig.from_dict(config["model"])
        checkpoint = Checkpoint(
            model_config=model_config,
            train_config=TrainConfig.from_dict(config["train"]),
            preprocess_config=PreprocessConfig.from_dict(config["preprocess"]),
            vocabulary=Vocabulary.from_dict(payload["vocabulary"]),
            table=EmbeddingTable(_tensor_from(payload["embedding"])),
            params=OrderedDict((name, _tensor_from(t)) for name, t in payload["params"].items()),
            history=[EpochRecord(**r) for r in payload["history"]],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointFormatError(f"{path} is missing or has malformed fields: {e}") from None
    logger.info(f"Loaded checkpoint {path} ({model_config.variant}, {len(checkpoint.vocabulary)} tokens)")
    return checkpoint


def fit(corpus: List[Document], config: TrainConfig, model_config: Optional[ModelConfig] = None,
        preprocess_config: Optional[PreprocessConfig] = None,
        pretrained: Optional[Dict[str, np.ndarray]] = None) -> Checkpoint:
    """Train one model on the whole corpus (minus the validation slice) and bundle it."""
    model_config = replace(model_config or ModelConfig(), variant=config.variant)
    preprocess_config = preprocess_config or PreprocessConfig()
    tokens = {d.id: preprocess(d.text, preprocess_config) for d in corpus}
    fit_docs, val_docs = stratified_holdout(corpus, config.validation_fraction,
                                            derive_seed(config.seed, "validation/main"))
    vocab = build_vocabulary([tokens[d.id] for d in fit_docs], config.max_vocab)
    table = assemble_embedding(vocab, pretrained or {}, model_config.embed_dim,
                               derive_seed(config.seed, "embedding/main"))
    T = model_config.max_len
    split = DatasetSplit(_examples(fit_docs, tokens, vocab, T), _examples(val_docs, tokens, vocab, T))
    result = train(split, config, vocab, table, model_config, tag="main")
    return Checkpoint(result.model_config, config, preprocess_config, vocab, table, result.params, result.history)


def evaluate_checkpoint(checkpoint: Checkpoint, corpus: List[Document]) -> MetricsReport:
    T = checkpoint.model_config.max_len
    examples = [
        Example(d.id, encode(preprocess(d.text, checkpoint.preprocess_config), checkpoint.vocabulary, T), d.label)
        for d in corpus
    ]
    probs = predict_probs(examples, checkpoint.table, checkpoint.params, checkpoint.model_config)
    return evaluate_probabilities(probs, [e.label for e in examples], [e.id for e in examples])


@dataclass
class Prediction:
    label: int
    probabilities: List[float]
    top_tokens: List[Tuple[str, float]]

    def to_dict(self):
        return {
            "label": self.label,
            "probabilities": self.probabilities,
            "top_tokens": [{"token": t, "weight": w} for t, w in self.top_tokens],
        }


def predict_text(checkpoint: Checkpoint, text: str, top: int = 10) -> Prediction:
    """Classify raw text; with the attention variant also rank tokens by the
    attention mass that reaches them."""
    tokens = preprocess(text, checkpoint.preprocess_config)
    encoded = encode(tokens, checkpoint.vocabulary, checkpoint.model_config.max_len)
    out = hybrid_forward(encoded, checkpoint.table, checkpoint.params, checkpoint.model_config)
    top_tokens: List[Tuple[str, float]] = []
    if out.alpha is not None:
        weights = token_attention(encoded, out.alpha, checkpoint.model_config)
        per_token: Dict[str, float] = {}
        for position in range(encoded.true_length):
            token = tokens.tokens[position]
            per_token[token] = per_token.get(token, 0.0) + float(weights[position])
        ranked = sorted(per_token.items(), key=lambda item: (-item[1], item[0]))
        top_tokens = [(t, w) for t, w in ranked[:top] if w > 0]
    return Prediction(predict_label(out.probs), [float(p) for p in out.probs], top_tokens)
