import logging
import os
from typing import Tuple

import pandas as pd

from config import LABEL_COLUMN, SEED, TEXT_COLUMN
from utils import atomic_write_text, ensure_dir_exists, make_rng, write_csv

logger = logging.getLogger("synthetic")

# chosen so that preprocessing leaves every word unchanged
PHISH_WORDS = (
    "verify", "urgent", "password", "login", "suspend", "confirm", "bank", "security", "update", "wallet",
    "credential", "click", "prize", "winner", "refund", "invoice", "reset", "expire", "alert", "unlock",
)
LEGIT_WORDS = (
    "recipe", "garden", "weather", "football", "music", "library", "museum", "holiday", "coffee", "travel",
    "history", "science", "poetry", "kitchen", "forest", "mountain", "river", "theater", "concert", "picnic",
)
MARKUP_WORDS = ("html", "body", "div", "class")

CORPUS_FILE = "corpus.csv"
EMBEDDINGS_FILE = "embeddings.txt"


def synthetic_corpus(documents: int = 200, seed: int = SEED, min_words: int = 8, max_words: int = 20) -> pd.DataFrame:
    """Balanced two-class corpus of small HTML pages drawn from disjoint vocabularies."""
    if documents < 2:
        raise ValueError(f"need at least 2 documents, got {documents}")
    rng = make_rng(seed, "synthetic/corpus")
    labels = [i % 2 for i in range(documents)]
    rng.shuffle(labels)
    rows = []
    for label in labels:
        words = PHISH_WORDS if label == 1 else LEGIT_WORDS
        count = int(rng.integers(min_words, max_words + 1))
        body = " ".join(words[i] for i in rng.integers(0, len(words), size=count))
        rows.append({
            TEXT_COLUMN: f'<html><body><div class="content"><p>{body}</p></div></body></html>',
            LABEL_COLUMN: str(label),
        })
    return pd.DataFrame(rows, columns=[TEXT_COLUMN, LABEL_COLUMN])


def synthetic_embeddings(d: int, seed: int = SEED) -> str:
    """One standard-normal vector per word, in the whitespace text format."""
    rng = make_rng(seed, "synthetic/embeddings")
    lines = []
    for token in PHISH_WORDS + LEGIT_WORDS + MARKUP_WORDS:
        vector = rng.normal(0.0, 1.0, size=d)
        lines.append(" ".join([token] + [repr(float(v)) for v in vector]))
    return "\n".join(lines) + "\n"


def write_synthetic(out_dir: str, documents: int = 200, d: int = 16, seed: int = SEED) -> Tuple[str, str]:
    ensure_dir_exists(out_dir)
    corpus_path = os.path.join(out_dir, CORPUS_FILE)
    embeddings_path = os.path.join(out_dir, EMBEDDINGS_FILE)
    write_csv(corpus_path, synthetic_corpus(documents, seed))
    atomic_write_text(embeddings_path, synthetic_embeddings(d, seed))
    logger.info(f"Synthetic corpus of {documents} documents and {d}-d embeddings written to {out_dir}")
    return corpus_path, embeddings_path
