"""Normalization of raw social-media comments into whitespace tokens.

The pipeline runs in a fixed order::

    lowercase -> URL removal -> mention removal -> replace_empty
    -> non-alphabetic removal -> whitespace collapse -> split -> stopwords
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ClassLabel, LabeledDocument

URL_RE = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
MENTION_RE = re.compile(r"@\S+")

CleanText = list  # ordered list of nonempty, whitespace-free tokens


@dataclass(frozen=True)
class PreprocessConfig:
    lowercase: bool = True
    strip_urls: bool = True
    strip_mentions: bool = True
    strip_non_alphabetic: bool = True
    stopwords: frozenset[str] = field(default_factory=frozenset)
    replace_empty: str = ""
    collapse_whitespace: bool = True

    def __post_init__(self):
        words = frozenset(self.stopwords)
        if self.lowercase:
            words = frozenset(w.lower() for w in words)
        object.__setattr__(self, "stopwords", words)


def _is_word_char(ch: str) -> bool:
    # Letters plus combining marks, so decomposed Vietnamese diacritics survive.
    return unicodedata.category(ch)[0] in "LM"


def _strip_non_alphabetic(text: str) -> str:
    return "".join(ch if (_is_word_char(ch) or ch.isspace()) else " " for ch in text)


def normalize(text: str, config: PreprocessConfig = PreprocessConfig()) -> CleanText:
    if config.lowercase:
        text = text.lower()
    if config.strip_urls:
        text = URL_RE.sub(" ", text)
    if config.strip_mentions:
        text = MENTION_RE.sub(" ", text)
    for ch in config.replace_empty:
        text = text.replace(ch, "")
    if config.strip_non_alphabetic:
        text = _strip_non_alphabetic(text)
    if config.collapse_whitespace:
        text = " ".join(text.split())
    return [tok for tok in text.split() if tok not in config.stopwords]


def preprocess_corpus(
    docs: Sequence[LabeledDocument], config: PreprocessConfig = PreprocessConfig()
) -> list[tuple[str, CleanText, ClassLabel | None]]:
    """Normalize every document; empty results are kept, never dropped."""
    return [(d.id, normalize(d.text, config), d.label) for d in docs]


def parse_stopwords(lines: Iterable[str]) -> frozenset[str]:
    words = set()
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            words.add(line)
    return frozenset(words)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """One token per line, UTF-8; ``#`` starts a comment."""
    with Path(path).open(encoding="utf-8") as fh:
        return parse_stopwords(fh)


def sample_stopwords() -> frozenset[str]:
    """The small Vietnamese stopword list bundled with the package."""
    text = resources.files("vihsd").joinpath("data/stopwords_vi.txt").read_text(encoding="utf-8")
    return parse_stopwords(text.splitlines())
