import re
import warnings
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Tuple

from bs4 import BeautifulSoup, MarkupResemblesLocatorWarning
from bs4.element import Comment, Declaration, Doctype, NavigableString, ProcessingInstruction, Tag

from config import EMIT_BIGRAMS, MIN_TOKEN_LEN, STRIP_MARKUP
from errors import ConfigurationError

# Fixed English stop-word list; reproduced verbatim in docs/preprocessing.md.
DEFAULT_STOP_WORDS: FrozenSet[str] = frozenset("""
a about above after again against ain all am an and any are aren as at
be because been before being below between both but by
can couldn
did didn do does doesn doing don down during
each
few for from further
had hadn has hasn have haven having he her here hers herself him himself his how
i if in into is isn it its itself
just
ll
me mightn more most mustn my myself
needn no nor not now
of off on once only or other our ours ourselves out over own
re
same shan she should shouldn so some such
than that the their theirs them themselves then there these they this those through to too
under until up
ve very
was wasn we were weren what when where which while who whom why will with won wouldn
you your yours yourself yourselves
also could would may might must shall us upon yet
doe dure ourselve themselve yourselve
""".split())

DROPPED_ELEMENTS = ("script", "style")

_SPLIT = re.compile(r"[^\w@]+")


@dataclass(frozen=True)
class PreprocessConfig:
    stop_words: FrozenSet[str] = field(default=DEFAULT_STOP_WORDS)
    min_token_len: int = MIN_TOKEN_LEN
    emit_bigrams: bool = EMIT_BIGRAMS
    strip_markup: bool = STRIP_MARKUP

    def __post_init__(self):
        if self.min_token_len < 1:
            raise ConfigurationError(f"min_token_len must be >= 1, got {self.min_token_len}")
        object.__setattr__(self, "stop_words", frozenset(w.lower() for w in self.stop_words))

    def to_dict(self):
        return {
            "stop_words": sorted(self.stop_words),
            "min_token_len": self.min_token_len,
            "emit_bigrams": self.emit_bigrams,
            "strip_markup": self.strip_markup,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            stop_words=frozenset(data["stop_words"]),
            min_token_len=data["min_token_len"],
            emit_bigrams=data["emit_bigrams"],
            strip_markup=data["strip_markup"],
        )


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[str, ...]

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def _markup_words(text: str) -> Iterable[str]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarkupResemblesLocatorWarning)
        soup = BeautifulSoup(text, "html.parser")
    for node in soup.descendants:
        if isinstance(node, Tag):
            yield node.name
            yield from node.attrs.keys()
        elif isinstance(node, (Comment, Doctype, Declaration, ProcessingInstruction)):
            continue
        elif isinstance(node, NavigableString):
            if node.parent is not None and node.parent.name in DROPPED_ELEMENTS:
                continue
            yield str(node)


def clean(text: str, strip_markup: bool = STRIP_MARKUP) -> str:
    """Lowercase and collapse whitespace; with ``strip_markup`` the tag and
    attribute names survive as words, entity references are decoded and the
    bodies of script/style elements are dropped."""
    if strip_markup:
        text = " ".join(_markup_words(text))
    return " ".join(text.lower().split())


def tokenize(text: str, min_token_len: int = MIN_TOKEN_LEN) -> List[str]:
    # '@' and '_' stay inside tokens ("p@ssw0rd").
    return [t for t in _SPLIT.split(text) if len(t) >= min_token_len and not t.isdigit()]


_VOWELS = set("aeiou")


def _has_vowel(stem: str) -> bool:
    return any(c in _VOWELS or (c == "y" and i > 0) for i, c in enumerate(stem))


def _is_consonant(word: str, i: int) -> bool:
    c = word[i]
    if c in _VOWELS:
        return False
    if c == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return c.isalpha()


def _ends_cvc(stem: str) -> bool:
    if len(stem) != 3:
        return False
    return (
        _is_consonant(stem, 0)
        and not _is_consonant(stem, 1)
        and _is_consonant(stem, 2)
        and stem[2] not in "wxy"
    )


def _restore(stem: str) -> str:
    if stem.endswith(("at", "bl", "iz")):
        return stem + "e"
    if len(stem) >= 2 and stem[-1] == stem[-2] and _is_consonant(stem, len(stem) - 1) and stem[-1] not in "lsz":
        return stem[:-1]
    if _ends_cvc(stem):
        return stem + "e"
    return stem


def _strip_once(token: str) -> str:
    if token.endswith("ies") and len(token) > 4:
        return token[:-3] + "y"
    if token.endswith("sses"):
        return token[:-2]
    if token.endswith("s") and len(token) > 3 and not token.endswith(("ss", "us", "is")):
        return token[:-1]
    for suffix in ("ing", "ed"):
        if token.endswith(suffix):
            stem = token[: -len(suffix)]
            if suffix == "ed" and stem.endswith("e"):
                return token
            if len(stem) >= 3 and _has_vowel(stem):
                return _restore(stem)
            return token
    return token


def lemmatize(token: str) -> str:
    """Rule-based suffix stripping, applied until no rule fires.

    Rules, first match wins on each pass:
      1. ies -> y              (token longer than 4)
      2. sses -> ss
      3. s -> ''               (token longer than 3, not ending ss/us/is)
      4. ing / ed -> ''        (stem of 3+ chars holding a vowel; not after 'e' for ed)
         then: stem ending at/bl/iz gains 'e'; a doubled final consonant other
         than l/s/z is undoubled; a 3-letter consonant-vowel-consonant stem
         (last not w/x/y) gains 'e'.
    Iterating to the fixed point makes the function idempotent.
    """
    while True:
        stripped = _strip_once(token)
        if stripped == token:
            return token
        token = stripped


def remove_stop_words(tokens: List[str], stop_words: FrozenSet[str] = DEFAULT_STOP_WORDS) -> List[str]:
    return [t for t in tokens if t not in stop_words]


def generate_bigrams(tokens: List[str]) -> List[str]:
    return [f"{a}_{b}" for a, b in zip(tokens, tokens[1:])]


def preprocess(text: str, config: PreprocessConfig = PreprocessConfig()) -> TokenSequence:
    cleaned = clean(text, config.strip_markup)
    unigrams = [lemmatize(t) for t in tokenize(cleaned, config.min_token_len)]
    unigrams = remove_stop_words(unigrams, config.stop_words)
    tokens = list(unigrams)
    if config.emit_bigrams:
        tokens.extend(generate_bigrams(unigrams))
    return TokenSequence(tuple(tokens))
