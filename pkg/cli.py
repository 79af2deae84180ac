"""Batch command line: stats, preprocess, train, cross-validate, evaluate, predict, compare, synth.

JSON payloads go to standard output or to files under ``--out``; logs and
errors go to standard error. A failure prints one JSON line
``{"error": code, "message": text}`` and exits 1 (pipeline) or 2 (usage).
"""
import json
import logging
import os
from typing import Optional, Tuple

import click
import coloredlogs

from config import (AGGREGATE_NAME, CHECKPOINT_NAME, CORRELATION_NAME, HISTORY_NAME, TOKENS_NAME, VARIANTS,
                    RunConfig, load_run_config)
from corpus import compute_stats, load_corpus
from errors import PipelineError
from layers import ModelConfig
from preprocess import DEFAULT_STOP_WORDS, PreprocessConfig, preprocess as preprocess_text
from synthetic import write_synthetic
from training import (TrainConfig, compare_variants, cross_validate, evaluate_checkpoint, fit, history_frame,
                      load_checkpoint, predict_text, save_checkpoint)
from utils import atomic_write_text, dumps_json, ensure_dir_exists, write_csv, write_json
from vocab_embed import pretrained_or_empty

logger = logging.getLogger("cli")

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def split_run_config(run: RunConfig, progress: bool = False) -> Tuple[PreprocessConfig, ModelConfig, TrainConfig]:
    preprocess_config = PreprocessConfig(
        stop_words=frozenset(run.stop_words) if run.stop_words is not None else DEFAULT_STOP_WORDS,
        min_token_len=run.min_token_len,
        emit_bigrams=run.emit_bigrams,
        strip_markup=run.strip_markup,
    )
    model_config = ModelConfig(
        variant=run.variant,
        max_len=run.max_len,
        embed_dim=run.embed_dim,
        conv_filters=run.conv_filters,
        kernel_size=run.kernel_size,
        pool_size=run.pool_size,
        num_heads=run.num_heads,
        key_dim=run.key_dim,
        lstm_units=run.lstm_units,
        dropout=run.dropout,
        conv_bias_inside_relu=run.conv_bias_inside_relu,
        forget_bias_one=run.forget_bias_one,
    )
    train_config = TrainConfig(
        epochs=run.epochs,
        batch_size=run.batch_size,
        learning_rate=run.learning_rate,
        adam_beta1=run.adam_beta1,
        adam_beta2=run.adam_beta2,
        adam_eps=run.adam_eps,
        k=run.k,
        seed=run.seed,
        variant=run.variant,
        class_weighting=run.class_weighting,
        grad_clip_norm=run.grad_clip_norm,
        validation_fraction=run.validation_fraction,
        max_vocab=run.max_vocab,
        progress=progress,
    )
    return preprocess_config, model_config, train_config


def _run_config(config_path: Optional[str], required: Tuple[str, ...] = (), **overrides) -> RunConfig:
    return load_run_config(config_path, overrides).validate(required)


def _corpus(run: RunConfig):
    return load_corpus(run.corpus, run.text_column, run.label_column)


def training_options(f):
    """Flags shared by every subcommand that trains."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="Flat JSON run config."),
        click.option("--embeddings", type=click.Path(dir_okay=False), help="Pretrained vectors, one token per line."),
        click.option("--variant", type=click.Choice(VARIANTS)),
        click.option("--epochs", type=int),
        click.option("--batch-size", type=int),
        click.option("--learning-rate", type=float),
        click.option("--max-len", type=int),
        click.option("--embed-dim", type=int),
        click.option("--k", "k", type=int, help="Number of folds."),
        click.option("--seed", type=int),
        click.option("--jobs", type=int, help="Folds trained in parallel."),
        click.option("--progress", is_flag=True, help="Show epoch progress bars."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


@click.group()
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level):
    """Hybrid CNN-LSTM-attention classifier for HTML documents."""
    coloredlogs.install(level=log_level.upper(), fmt=LOG_FORMAT)


@cli.command()
@click.option("--corpus", type=click.Path(dir_okay=False), help="Corpus CSV.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
def stats(corpus, config_path):
    """Corpus size, class counts and length histogram as JSON."""
    run = _run_config(config_path, ("corpus",), corpus=corpus)
    click.echo(dumps_json(compute_stats(_corpus(run), run.bucket_width).to_dict()), nl=False)


@cli.command()
@click.option("--corpus", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
def preprocess(corpus, config_path, out_dir):
    """Write the token sequence of every document as JSON lines."""
    run = _run_config(config_path, ("corpus", "out_dir"), corpus=corpus, out_dir=out_dir)
    preprocess_config, _, _ = split_run_config(run)
    lines = []
    for doc in _corpus(run):
        tokens = preprocess_text(doc.text, preprocess_config)
        lines.append(json.dumps({"id": doc.id, "label": doc.label, "tokens": list(tokens.tokens)}, sort_keys=True))
    path = os.path.join(run.out_dir, TOKENS_NAME)
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    logger.info(f"Wrote {len(lines)} token sequences to {path}")


@cli.command()
@click.option("--corpus", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@training_options
def train(corpus, out_dir, config_path, progress, **flags):
    """Train on the whole corpus and save a checkpoint plus its history."""
    run = _run_config(config_path, ("corpus", "out_dir"), corpus=corpus, out_dir=out_dir, **flags)
    preprocess_config, model_config, train_config = split_run_config(run, progress)
    pretrained = pretrained_or_empty(run.embeddings, model_config.embed_dim)
    checkpoint = fit(_corpus(run), train_config, model_config, preprocess_config, pretrained)
    ensure_dir_exists(run.out_dir)
    save_checkpoint(os.path.join(run.out_dir, CHECKPOINT_NAME), checkpoint)
    write_csv(os.path.join(run.out_dir, HISTORY_NAME), history_frame(checkpoint.history))


@cli.command("cross-validate")
@click.option("--corpus", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@training_options
def cross_validate_command(corpus, out_dir, config_path, progress, **flags):
    """Stratified k-fold evaluation with per-fold reports and an aggregate."""
    run = _run_config(config_path, ("corpus", "out_dir"), corpus=corpus, out_dir=out_dir, **flags)
    preprocess_config, model_config, train_config = split_run_config(run, progress)
    pretrained = pretrained_or_empty(run.embeddings, model_config.embed_dim)
    result = cross_validate(_corpus(run), train_config, model_config, preprocess_config, pretrained, run.jobs)

    ensure_dir_exists(run.out_dir)
    for fold in result.folds:
        prefix = os.path.join(run.out_dir, f"fold_{fold.fold}")
        payload = dict(fold=fold.fold, train_ids=fold.train_ids, validation_ids=fold.val_ids,
                       test_ids=fold.test_ids, vocabulary_size=len(fold.vocabulary), **fold.report.to_dict())
        write_json(f"{prefix}_metrics.json", payload)
        if fold.report.roc is not None:
            write_csv(f"{prefix}_roc.csv", fold.report.roc.to_frame())
        write_csv(f"{prefix}_history.csv", history_frame(fold.history))
    summary = {"variant": result.variant, "k": train_config.k, "aggregate": result.aggregate}
    write_json(os.path.join(run.out_dir, AGGREGATE_NAME), summary)
    write_json(os.path.join(run.out_dir, CORRELATION_NAME), result.correlation)
    click.echo(dumps_json(summary), nl=False)


@cli.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--corpus", type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(dir_okay=False))
def evaluate(checkpoint, corpus, config_path):
    """Score a saved model on a labelled corpus."""
    run = _run_config(config_path, ("checkpoint", "corpus"), checkpoint=checkpoint, corpus=corpus)
    report = evaluate_checkpoint(load_checkpoint(run.checkpoint), _corpus(run))
    click.echo(dumps_json(report.to_dict()), nl=False)


@cli.command()
@click.option("--checkpoint", type=click.Path(dir_okay=False))
@click.option("--input", "text", required=True, help="Text to classify, or a path to a file holding it.")
@click.option("--top", default=10, show_default=True, type=click.IntRange(min=0))
def predict(checkpoint, text, top):
    """Classify one document and list the tokens attention favoured."""
    run = _run_config(None, ("checkpoint",), checkpoint=checkpoint)
    if os.path.isfile(text):
        with open(text, "r", encoding="utf-8") as f:
            text = f.read()
    prediction = predict_text(load_checkpoint(run.checkpoint), text, top)
    click.echo(dumps_json(prediction.to_dict()), nl=False)


@cli.command()
@click.option("--corpus", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@training_options
def compare(corpus, out_dir, config_path, progress, **flags):
    """Cross-validate all four variants on the same folds."""
    run = _run_config(config_path, ("corpus", "out_dir"), corpus=corpus, out_dir=out_dir, **flags)
    preprocess_config, model_config, train_config = split_run_config(run, progress)
    pretrained = pretrained_or_empty(run.embeddings, model_config.embed_dim)
    rows, timing = compare_variants(_corpus(run), train_config, model_config, preprocess_config, pretrained,
                                    run.jobs)
    ensure_dir_exists(run.out_dir)
    write_json(os.path.join(run.out_dir, "variants.json"), rows)
    write_json(os.path.join(run.out_dir, "timing.json"), timing)
    click.echo(dumps_json(rows), nl=False)


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--documents", default=200, show_default=True, type=click.IntRange(min=2))
@click.option("--dim", default=16, show_default=True, type=click.IntRange(min=1))
@click.option("--seed", default=42, show_default=True, type=int)
def synth(out_dir, documents, dim, seed):
    """Write a separable synthetic corpus and a matching embedding file."""
    corpus_path, embeddings_path = write_synthetic(out_dir, documents, dim, seed)
    click.echo(dumps_json({"corpus": corpus_path, "embeddings": embeddings_path}), nl=False)


def _fail(code: str, message: str, status: int) -> int:
    click.echo(json.dumps({"error": code, "message": message}), err=True)
    return status


def main(argv=None) -> int:
    try:
        result = cli.main(args=argv, prog_name="hybrid-classifier", standalone_mode=False)
    except click.UsageError as e:
        return _fail("usage_error", e.format_message(), 2)
    except click.ClickException as e:
        return _fail("usage_error", e.format_message(), e.exit_code or 2)
    except click.Abort:
        return _fail("aborted", "aborted", 1)
    except PipelineError as e:
        logger.debug("pipeline error", exc_info=True)
        return _fail(e.code, e.message, 1)
    except OSError as e:
        return _fail("io_error", str(e), 1)
    return result if isinstance(result, int) else 0
