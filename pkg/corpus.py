import io
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Tuple

import pandas as pd

from config import HISTOGRAM_BUCKET, LABEL_COLUMN, TEXT_COLUMN
from errors import ConfigurationError, CorpusFormatError, EmptyCorpusError, InfeasibleStratificationError, RowError
from utils import make_rng

logger = logging.getLogger("corpus")

LABELS = (0, 1)
_LABEL_VALUES = {"0": 0, "1": 1, "0.0": 0, "1.0": 1}
_PARSER_LINE = re.compile(r"line (\d+)")


@dataclass(frozen=True)
class Document:
    id: int
    text: str
    label: int


@dataclass(frozen=True)
class CorpusStats:
    total: int
    per_class: Dict[int, int]
    length_histogram: List[Tuple[int, int]]

    def to_dict(self):
        return {
            "total": self.total,
            "per_class": {str(label): count for label, count in sorted(self.per_class.items())},
            "length_histogram": [[lo, count] for lo, count in self.length_histogram],
        }


@dataclass(frozen=True)
class FoldPlan:
    """Stratified fold assignment; ``ids[i]`` sits in fold ``folds[i]``."""

    k: int
    ids: Tuple[int, ...]
    folds: Tuple[int, ...]

    def fold_of(self, doc_id: int) -> int:
        return self.folds[self.ids.index(doc_id)]

    def test_ids(self, fold: int) -> List[int]:
        return [i for i, f in zip(self.ids, self.folds) if f == fold]

    def train_ids(self, fold: int) -> List[int]:
        return [i for i, f in zip(self.ids, self.folds) if f != fold]


def _parse_label(value, row: int) -> int:
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value in (0, 1):
        return int(value)
    label = _LABEL_VALUES.get(str(value).strip())
    if label is None:
        raise RowError(f"label {value!r} is not 0 or 1", row)
    return label


def _read_text(path: str) -> str:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        line = raw[: e.start].count(b"\n") + 1
        raise CorpusFormatError(f"{path} is not UTF-8 (byte {e.start})", line) from None


def load_corpus(path: str, text_column: str = TEXT_COLUMN, label_column: str = LABEL_COLUMN) -> List[Document]:
    """Read a comma-separated, double-quoted UTF-8 CSV with a header row.

    Row numbers in errors count data rows from 1; format errors carry the
    physical file line instead.
    """
    text = _read_text(path)
    try:
        df = pd.read_csv(
            io.StringIO(text),
            sep=",",
            quotechar='"',
            doublequote=True,
            dtype=str,
            keep_default_na=False,
        )
    except pd.errors.EmptyDataError:
        raise EmptyCorpusError(f"{path} is empty") from None
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        raise CorpusFormatError(f"{path} is not a well-formed CSV: {e}",
                                int(match.group(1)) if match else None) from None

    for column in (text_column, label_column):
        if column not in df.columns:
            raise ConfigurationError(f"column '{column}' not found in {path}")

    if df.empty:
        raise EmptyCorpusError(f"{path} has a header but no data rows")

    documents = []
    for row, (text, label) in enumerate(zip(df[text_column], df[label_column]), start=1):
        documents.append(Document(id=row - 1, text=text, label=_parse_label(label, row)))

    counts = Counter(d.label for d in documents)
    logger.info(f"Loaded {len(documents)} documents from {path} (label 1: {counts[1]}, label 0: {counts[0]})")
    return documents


def compute_stats(corpus: List[Document], bucket_width: int = HISTOGRAM_BUCKET) -> CorpusStats:
    """Class counts plus a histogram of text lengths; only non-empty buckets are listed."""
    if bucket_width <= 0:
        raise ConfigurationError(f"bucket_width must be positive, got {bucket_width}")
    per_class = {label: 0 for label in LABELS}
    buckets: Counter = Counter()
    for doc in corpus:
        per_class[doc.label] += 1
        buckets[(len(doc.text) // bucket_width) * bucket_width] += 1
    return CorpusStats(
        total=len(corpus),
        per_class=per_class,
        length_histogram=sorted(buckets.items()),
    )


def plan_folds(corpus: List[Document], k: int, seed: int) -> FoldPlan:
    """Stratified k-fold assignment.

    Each class (ascending label) is sorted by id, shuffled with a PCG64
    generator seeded from ``seed``, then dealt round-robin. The dealing
    position carries over from one class to the next so overall fold sizes
    also differ by at most one.
    """
    if k < 2:
        raise ConfigurationError(f"k must be at least 2, got {k}")
    by_class: Dict[int, List[int]] = {}
    for doc in corpus:
        by_class.setdefault(doc.label, []).append(doc.id)

    for label in LABELS:
        size = len(by_class.get(label, []))
        if size < k:
            raise InfeasibleStratificationError(f"class {label} has {size} documents, fewer than k={k}")

    rng = make_rng(seed, "folds")
    assignment: Dict[int, int] = {}
    position = 0
    for label in sorted(by_class):
        members = sorted(by_class[label])
        order = rng.permutation(len(members))
        for index in order:
            assignment[members[index]] = position % k
            position += 1

    ids = tuple(doc.id for doc in corpus)
    return FoldPlan(k=k, ids=ids, folds=tuple(assignment[i] for i in ids))


def stratified_holdout(docs: List[Document], fraction: float, seed: int) -> Tuple[List[Document], List[Document]]:
    """Split off a seeded stratified slice (``fraction`` of each class, at least one
    document when the class has two or more) and return (kept, holdout)."""
    rng = make_rng(seed, "validation")
    holdout_ids = set()
    by_class: Dict[int, List[Document]] = {}
    for doc in docs:
        by_class.setdefault(doc.label, []).append(doc)
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda d: d.id)
        if fraction <= 0 or len(members) < 2:
            continue
        take = max(1, int(round(fraction * len(members))))
        take = min(take, len(members) - 1)
        for index in rng.permutation(len(members))[:take]:
            holdout_ids.add(members[index].id)
    kept = [d for d in docs if d.id not in holdout_ids]
    holdout = [d for d in docs if d.id in holdout_ids]
    return kept, holdout
