import os

import numpy as np
import pandas as pd
import pytest

from config import LABEL_COLUMN, TEXT_COLUMN
from corpus import Document

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")

collect_ignore = ["examples"]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end learning runs (seconds to minutes)")


@pytest.fixture
def sample_corpus_path():
    return os.path.join(DATA_DIR, "sample_corpus.csv")


@pytest.fixture
def write_corpus(tmp_path):
    """Factory writing (text, label) rows to a CSV under tmp_path."""

    def _write(rows, name="corpus.csv", text_column=TEXT_COLUMN, label_column=LABEL_COLUMN):
        path = tmp_path / name
        pd.DataFrame(rows, columns=[text_column, label_column]).to_csv(path, index=False)
        return str(path)

    return _write


@pytest.fixture
def balanced_docs():
    def _make(n_per_class, offset=0):
        docs = [Document(i, f"doc {i}", i % 2) for i in range(offset, offset + 2 * n_per_class)]
        return docs

    return _make


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
