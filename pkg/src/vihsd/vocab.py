"""Token vocabularies, fixed-length integer encoding and pretrained embeddings."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import DataError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DEFAULT_MAX_LEN = 100
OOV_SCALE = 0.25


class Vocabulary:
    """Token <-> id map. Ids 0 and 1 are reserved for padding and unknowns.

    ``token_to_id`` holds corpus tokens only (ids >= 2), so a corpus token
    spelled like a reserved marker never collides with it.
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self.id_to_token: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.token_to_id: dict[str, int] = {}
        for tok in tokens:
            if tok in self.token_to_id:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.token_to_id[tok] = len(self.id_to_token)
            self.id_to_token.append(tok)

    pad_id = PAD_ID
    unk_id = UNK_ID

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def corpus_tokens(self) -> list[str]:
        return self.id_to_token[2:]

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write("#vocab v1\n")
            for tok in self.corpus_tokens():
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if not lines or lines[0] != "#vocab v1":
            raise DataError(f"{path}: not a v1 vocabulary file")
        return cls(tok for tok in lines[1:] if tok)


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 1, max_size: int | None = None) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times, most frequent first.

    Ties are broken lexicographically; ``max_size`` caps the number of
    corpus tokens (reserved ids excluded).
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(tok for doc in corpus for tok in doc)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max_size]
    return Vocabulary(ranked)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    true_length: int


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    kept = tokens[:max_len]
    for i, tok in enumerate(kept):
        ids[i] = vocab.token_to_id.get(tok, UNK_ID)
    return TokenSequence(ids, len(kept))


def decode(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[i] for i in seq.ids[: seq.true_length]]


def encode_batch(texts: Sequence[Sequence[str]], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN):
    """Stack encodings into an ``(N, max_len)`` id matrix and a length vector."""
    seqs = [encode(t, vocab, max_len) for t in texts]
    ids = np.stack([s.ids for s in seqs]) if seqs else np.zeros((0, max_len), dtype=np.int64)
    lengths = np.array([s.true_length for s in seqs], dtype=np.int64)
    return ids, lengths


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray
    coverage: float

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def random_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-OOV_SCALE, OOV_SCALE, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    return EmbeddingMatrix(matrix, 0.0)


def _read_vectors(path: Path):
    with path.open(encoding="utf-8") as fh:
        first = True
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\r\n").rstrip(" ").split(" ")
            if not parts or parts == [""]:
                continue
            if first:
                first = False
                if len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                    yield lineno, None, int(parts[1])
                    continue
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric vector component") from None
            yield lineno, parts[0], vec


def load_embeddings(
    path: str | Path, vocab: Vocabulary, expected_dim: int | None = None, seed: int = 0
) -> EmbeddingMatrix:
    """Build a ``|V| x d`` matrix from a word2vec/fastText text file.

    Vocabulary tokens found in the file get their vector verbatim; the rest
    (and the unknown row) are drawn from U(-0.25, 0.25) with ``seed``. The
    padding row is zero. Files with or without a ``<count> <dim>`` header
    are accepted.
    """
    path = Path(path)
    dim = expected_dim
    found: dict[int, np.ndarray] = {}
    for lineno, token, vec in _read_vectors(path):
        if token is None:
            if dim is not None and vec != dim:
                raise DataError(f"{path}: header dimension {vec} != expected {dim}")
            dim = vec
            continue
        if dim is None:
            dim = len(vec)
        if len(vec) != dim:
            raise DataError(f"{path}: line {lineno}: vector has {len(vec)} components, expected {dim}")
        idx = vocab.token_to_id.get(token)
        if idx is not None and idx not in found:
            found[idx] = vec
    if dim is None:
        raise DataError(f"{path}: no vectors and no dimension")
    matrix = random_embeddings(vocab, dim, seed).matrix
    for idx, vec in found.items():
        matrix[idx] = vec
    if not np.all(np.isfinite(matrix)):
        raise DataError(f"{path}: non-finite vector component")
    n_corpus = len(vocab) - 2
    coverage = len(found) / n_corpus if n_corpus else 0.0
    return EmbeddingMatrix(matrix, coverage)


def toy_embeddings_path() -> Path:
    """Path of the bundled 10-token, 4-dimensional embedding file."""
    return Path(str(resources.files("vihsd").joinpath("data/toy_embeddings.txt")))
