import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner

from cli import cli, main
from config import VARIANTS

TINY_RUN = {
    "max_len": 20, "embed_dim": 16, "conv_filters": 4, "kernel_size": 3, "pool_size": 2, "num_heads": 2,
    "key_dim": 4, "lstm_units": 4, "dropout": 0.0, "epochs": 1, "batch_size": 16, "k": 5, "seed": 7,
}


def last_error(capsys):
    err = capsys.readouterr().err
    return json.loads([line for line in err.splitlines() if line.strip()][-1])


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def synthetic_dir(tmp_path, runner):
    out = tmp_path / "synth"
    result = runner.invoke(cli, ["synth", "--out", str(out), "--documents", "40", "--dim", "16", "--seed", "3"])
    assert result.exit_code == 0, result.output
    paths = json.loads(result.stdout)
    assert os.path.exists(paths["corpus"]) and os.path.exists(paths["embeddings"])
    return out


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(TINY_RUN), encoding="utf-8")
    return str(path)


def test_stats(runner, sample_corpus_path):
    result = runner.invoke(cli, ["stats", "--corpus", sample_corpus_path])
    assert result.exit_code == 0, result.output
    stats = json.loads(result.stdout)
    assert stats["total"] == 2
    assert stats["per_class"] == {"0": 1, "1": 1}


def test_preprocess_writes_token_lines(runner, sample_corpus_path, tmp_path):
    result = runner.invoke(cli, ["preprocess", "--corpus", sample_corpus_path, "--out", str(tmp_path / "tok")])
    assert result.exit_code == 0, result.output
    with open(tmp_path / "tok" / "tokens.jsonl", encoding="utf-8") as f:
        rows = [json.loads(line) for line in f]
    assert [r["label"] for r in rows] == [1, 0]
    assert "password" in rows[0]["tokens"]
    assert rows[0]["tokens"][:2] == ["html", "body"]


def test_cross_validate_writes_reports_and_is_reproducible(runner, synthetic_dir, tiny_config, tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        result = runner.invoke(cli, ["cross-validate", "--corpus", str(synthetic_dir / "corpus.csv"),
                                     "--embeddings", str(synthetic_dir / "embeddings.txt"),
                                     "--config", tiny_config, "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out)

    first, second = outputs
    for i in range(5):
        metrics = json.loads((first / f"fold_{i}_metrics.json").read_text(encoding="utf-8"))
        assert metrics["fold"] == i
        assert metrics["n"] == len(metrics["test_ids"]) == 8
        assert len(metrics["train_ids"]) + len(metrics["validation_ids"]) == 32
        assert (first / f"fold_{i}_history.csv").exists()
        assert (first / f"fold_{i}_history.csv").read_bytes() == (second / f"fold_{i}_history.csv").read_bytes()
        assert (first / f"fold_{i}_metrics.json").read_bytes() == (second / f"fold_{i}_metrics.json").read_bytes()
    summary = json.loads((first / "aggregate.json").read_text(encoding="utf-8"))
    assert summary["k"] == 5
    assert set(summary["aggregate"]) == {"accuracy", "precision", "recall", "f1", "auc"}
    assert (first / "aggregate.json").read_bytes() == (second / "aggregate.json").read_bytes()
    assert (first / "correlation.json").exists()


def test_compare_writes_one_row_per_variant(runner, synthetic_dir, tiny_config, tmp_path):
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        result = runner.invoke(cli, ["compare", "--corpus", str(synthetic_dir / "corpus.csv"),
                                     "--embeddings", str(synthetic_dir / "embeddings.txt"),
                                     "--config", tiny_config, "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out)

    first, second = outputs
    rows = json.loads((first / "variants.json").read_text(encoding="utf-8"))
    assert set(rows) == set(VARIANTS)
    for metrics in rows.values():
        assert set(metrics) == {"accuracy", "precision", "recall", "f1", "auc"}
        assert 0.0 <= metrics["accuracy"] <= 1.0
    assert (first / "variants.json").read_bytes() == (second / "variants.json").read_bytes()
    timing = json.loads((first / "timing.json").read_text(encoding="utf-8"))
    assert set(timing) == set(VARIANTS)
    assert all(seconds >= 0.0 for seconds in timing.values())


def test_train_evaluate_predict(runner, synthetic_dir, tiny_config, tmp_path):
    corpus = str(synthetic_dir / "corpus.csv")
    model_dir = tmp_path / "model"
    result = runner.invoke(cli, ["train", "--corpus", corpus, "--config", tiny_config, "--epochs", "2",
                                 "--out", str(model_dir)])
    assert result.exit_code == 0, result.output
    checkpoint = str(model_dir / "model.ckpt.json")
    history = pd.read_csv(model_dir / "history.csv")
    assert history["epoch"].tolist() == [1, 2]

    result = runner.invoke(cli, ["evaluate", "--checkpoint", checkpoint, "--corpus", corpus])
    assert result.exit_code == 0, result.output
    report = json.loads(result.stdout)
    assert report["n"] == 40
    assert 0.0 <= report["accuracy"] <= 1.0

    page = "<html><body><p>verify password login urgent</p></body></html>"
    result = runner.invoke(cli, ["predict", "--checkpoint", checkpoint, "--input", page, "--top", "3"])
    assert result.exit_code == 0, result.output
    prediction = json.loads(result.stdout)
    assert sum(prediction["probabilities"]) == pytest.approx(1.0)
    assert prediction["label"] in (0, 1)
    assert len(prediction["top_tokens"]) <= 3


def test_flags_override_config_file(runner, synthetic_dir, tiny_config, tmp_path):
    out = tmp_path / "model"
    result = runner.invoke(cli, ["train", "--corpus", str(synthetic_dir / "corpus.csv"), "--config", tiny_config,
                                 "--epochs", "3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert len(pd.read_csv(out / "history.csv")) == 3


def test_missing_corpus_is_a_configuration_error(capsys, tmp_path):
    assert main(["stats", "--corpus", str(tmp_path / "absent.csv")]) == 1
    error = last_error(capsys)
    assert error["error"] == "configuration_error"
    assert "absent.csv" in error["message"]


def test_unknown_config_key(capsys, sample_corpus_path, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"colour": "blue"}), encoding="utf-8")
    assert main(["stats", "--corpus", sample_corpus_path, "--config", str(path)]) == 1
    assert last_error(capsys)["error"] == "configuration_error"


def test_usage_error_exits_two(capsys):
    assert main(["stats", "--no-such-flag"]) == 2
    assert last_error(capsys)["error"] == "usage_error"


def test_corrupt_checkpoint(capsys, sample_corpus_path, tmp_path):
    checkpoint = tmp_path / "model.ckpt.json"
    checkpoint.write_text('{"format_version": 1, "config"', encoding="utf-8")
    assert main(["evaluate", "--checkpoint", str(checkpoint), "--corpus", sample_corpus_path]) == 1
    error = last_error(capsys)
    assert error["error"] == "checkpoint_format_error"
    assert "byte offset" in error["message"]


def test_bad_label_names_the_row(capsys, write_corpus):
    path = write_corpus([("<p>a</p>", 1), ("<p>b</p>", "maybe")])
    assert main(["stats", "--corpus", path]) == 1
    error = last_error(capsys)
    assert error["error"] == "row_error"
    assert "row 2" in error["message"]


@pytest.mark.parametrize("content", [b"htmlContent,isPhish\n<p>\xff</p>,1\n",
                                     b"htmlContent,isPhish\n<p>a</p>,1\n<p>b</p>,0,x,y\n"])
def test_malformed_corpus_is_a_json_error(capsys, tmp_path, content):
    path = tmp_path / "corpus.csv"
    path.write_bytes(content)
    assert main(["stats", "--corpus", str(path)]) == 1
    assert last_error(capsys)["error"] == "corpus_format_error"
