import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from config import EMBED_DIM, MAX_LEN, MAX_VOCAB, OOV_INIT_LIMIT
from errors import ConfigurationError, EmbeddingFormatError
from preprocess import TokenSequence
from utils import make_rng

logger = logging.getLogger("vocab_embed")

PAD_TOKEN = "<pad>"
OOV_TOKEN = "<oov>"
PAD_ID = 0
OOV_ID = 1


@dataclass(frozen=True)
class Vocabulary:
    """Token ids: PAD = 0, OOV = 1, then tokens by descending frequency."""

    id_to_token: Tuple[str, ...]
    max_size: int
    token_to_id: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.id_to_token[:2] != (PAD_TOKEN, OOV_TOKEN):
            raise ConfigurationError("vocabulary must start with the PAD and OOV tokens")
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token)})
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigurationError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.id_to_token[i] for i in ids if i != PAD_ID]

    def to_dict(self):
        return {"tokens": list(self.id_to_token), "max_size": self.max_size}

    @classmethod
    def from_dict(cls, data):
        return cls(id_to_token=tuple(data["tokens"]), max_size=data.get("max_size", len(data["tokens"]) - 2))


@dataclass(frozen=True, eq=False)
class EncodedSequence:
    ids: np.ndarray
    true_length: int

    def __post_init__(self):
        self.ids.flags.writeable = False


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.flags.writeable = False

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def build_vocabulary(sequences: Iterable[TokenSequence], max_size: int = MAX_VOCAB) -> Vocabulary:
    """Keep the ``max_size`` most frequent tokens, ties broken lexicographically.

    Callers pass training-split sequences only.
    """
    if max_size < 1:
        raise ConfigurationError(f"max_size must be >= 1, got {max_size}")
    counts: Counter = Counter()
    for seq in sequences:
        counts.update(seq.tokens)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:max_size]
    vocab = Vocabulary(id_to_token=(PAD_TOKEN, OOV_TOKEN) + tuple(t for t, _ in ranked), max_size=max_size)
    logger.info(f"Vocabulary: {len(vocab)} ids from {len(counts)} distinct tokens")
    return vocab


def encode(seq: TokenSequence, vocab: Vocabulary, T: int = MAX_LEN) -> EncodedSequence:
    if T < 1:
        raise ConfigurationError(f"sequence length must be >= 1, got {T}")
    kept = seq.tokens[:T]
    ids = np.full(T, PAD_ID, dtype=np.int64)
    ids[: len(kept)] = [vocab.lookup(t) for t in kept]
    return EncodedSequence(ids=ids, true_length=len(kept))


def load_embedding_file(path: str, expected_d: int = EMBED_DIM) -> Dict[str, np.ndarray]:
    """Parse a GloVe-style text file: ``token v1 ... vd`` per line.

    The first occurrence of a token wins.
    """
    vectors: Dict[str, np.ndarray] = {}
    duplicates = 0
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise EmbeddingFormatError(f"not UTF-8 (byte {e.start} of the line)", line_no) from None
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != expected_d:
                raise EmbeddingFormatError(
                    f"expected {expected_d} components after '{token}', found {len(values)}", line_no
                )
            try:
                vector = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"non-numeric component in vector for '{token}'", line_no) from None
            if not np.all(np.isfinite(vector)):
                raise EmbeddingFormatError(f"non-finite component in vector for '{token}'", line_no)
            if token in vectors:
                duplicates += 1
                continue
            vectors[token] = vector
    if duplicates:
        logger.warning(f"{path}: ignored {duplicates} duplicate tokens")
    logger.info(f"Loaded {len(vectors)} vectors of dimension {expected_d} from {path}")
    return vectors


def assemble_embedding(vocab: Vocabulary, pretrained: Dict[str, np.ndarray], d: int = EMBED_DIM,
                       seed: int = 0) -> EmbeddingTable:
    """Frozen table E: PAD row zero, pretrained rows copied, everything else
    (OOV, bigrams, unseen tokens) seeded uniform in [-0.05, 0.05]."""
    for token, vector in pretrained.items():
        if len(vector) != d:
            raise ConfigurationError(f"pretrained vector for '{token}' has dimension {len(vector)}, expected {d}")
    rng = make_rng(seed)
    matrix = rng.uniform(-OOV_INIT_LIMIT, OOV_INIT_LIMIT, size=(len(vocab), d))
    matrix[PAD_ID] = 0.0
    hits = 0
    for token_id, token in enumerate(vocab.id_to_token):
        if token_id == PAD_ID:
            continue
        vector = pretrained.get(token)
        if vector is not None:
            matrix[token_id] = vector
            hits += 1
    coverage = hits / max(1, len(vocab) - 2)
    logger.info(f"Embedding table {matrix.shape}: {hits} pretrained rows ({coverage:.1%} of vocabulary)")
    return EmbeddingTable(matrix=matrix)


def embed(seq: EncodedSequence, table: EmbeddingTable) -> np.ndarray:
    """Row t of the result is E[ids[t]] (T x d, a fresh copy)."""
    return table.matrix[seq.ids]


def pretrained_or_empty(path: Optional[str], d: int) -> Dict[str, np.ndarray]:
    if not path:
        logger.warning("No embedding file given: every row is a seeded random vector")
        return {}
    return load_embedding_file(path, d)
