"""Unigram TF-IDF features with smoothed idf and L2 normalization.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1
    x(t)   = count(t) * idf(t),  then x / ||x||_2
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import DataError

FORMAT_TAG = "#tfidf v1"


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __len__(self) -> int:
        return len(self.indices)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


class TfidfModel:
    def __init__(self, features: Sequence[str], df: Sequence[int], n_docs: int):
        self.features = list(features)
        self.index = {f: j for j, f in enumerate(self.features)}
        self.df = np.asarray(df, dtype=np.int64)
        self.n_docs = int(n_docs)
        self.idf = np.log((1.0 + self.n_docs) / (1.0 + self.df)) + 1.0

    @property
    def dim(self) -> int:
        return len(self.features)

    def transform(self, doc: Sequence[str]) -> SparseVector:
        return transform(self, doc)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"{FORMAT_TAG}\tn_docs={self.n_docs}\tn_features={self.dim}\n")
            for f, d, w in zip(self.features, self.df, self.idf):
                fh.write(f"{f}\t{d}\t{w!r}\n")

    @classmethod
    def load(cls, path: str | Path) -> "TfidfModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        head = lines[0].split("\t")
        if head[0] != FORMAT_TAG:
            raise DataError(f"{path}: not a v1 tfidf file")
        meta = dict(kv.split("=", 1) for kv in head[1:])
        features, df = [], []
        for line in lines[1:]:
            if not line:
                continue
            tok, d, _idf = line.split("\t")
            features.append(tok)
            df.append(int(d))
        model = cls(features, df, int(meta["n_docs"]))
        if model.dim != int(meta["n_features"]):
            raise DataError(f"{path}: feature count mismatch")
        return model


def fit(corpus: Sequence[Sequence[str]], min_df: int = 1) -> TfidfModel:
    """Collect document frequencies; features are sorted lexicographically."""
    if not corpus:
        raise ValueError("cannot fit TF-IDF on an empty corpus")
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df = Counter(tok for doc in corpus for tok in set(doc))
    features = sorted(t for t, c in df.items() if c >= min_df)
    return TfidfModel(features, [df[t] for t in features], len(corpus))


def transform(model: TfidfModel, doc: Sequence[str]) -> SparseVector:
    """Empty or all-unknown documents give an empty (norm 0) vector."""
    counts = Counter(model.index[t] for t in doc if t in model.index)
    if not counts:
        return SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0), model.dim)
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[j] for j in indices], dtype=float) * model.idf[indices]
    values /= math.sqrt(float(np.dot(values, values)))
    return SparseVector(indices, values, model.dim)


def to_csr(vectors: Sequence[SparseVector], dim: int | None = None) -> sp.csr_matrix:
    """Stack sparse vectors into a CSR matrix (one row per vector)."""
    if dim is None:
        if not vectors:
            raise ValueError("dim is required for an empty batch")
        dim = vectors[0].dim
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        if v.dim != dim:
            raise ValueError(f"vector {i} has dim {v.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + len(v)
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, dtype=np.int64)
    data = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))
