"""Linear classifiers over TF-IDF features.

Multinomial logistic regression and L2-regularized linear SVMs, both trained
by mini-batch (sub)gradient descent with a fixed step size, plus the two
stage cascade that turns two binary SVMs into a three-class decision:
stage A separates CLEAN from everything else, stage B separates OFFENSIVE
from HATE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import NUM_CLASSES, ClassLabel, DataError
from .tfidf import SparseVector, to_csr

LOGISTIC = "logistic"
HINGE = "hinge"


@dataclass
class LinearModel:
    weights: np.ndarray  # (C, F)
    bias: np.ndarray  # (C,)
    kind: str
    loss_history: list[float] = field(default_factory=list, compare=False, repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def scores(self, X) -> np.ndarray:
        """Class scores for a CSR/dense batch: softmax probabilities or margins."""
        logits = np.asarray(X @ self.weights.T) + self.bias
        if self.kind == LOGISTIC:
            return softmax(logits)
        return logits


@dataclass
class CascadeModel:
    stage_a: LinearModel
    stage_b: LinearModel

    @property
    def n_features(self) -> int:
        return self.stage_a.n_features


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def resolve_class_weights(class_weights, labels: np.ndarray, n_classes: int = NUM_CLASSES) -> np.ndarray:
    """``None`` -> ones; ``"balanced"`` -> n / (C * count_c); otherwise as given."""
    if class_weights is None:
        return np.ones(n_classes)
    if isinstance(class_weights, str):
        if class_weights != "balanced":
            raise ValueError(f"unknown class weighting {class_weights!r}")
        counts = np.bincount(labels, minlength=n_classes).astype(float)
        present = counts > 0
        out = np.ones(n_classes)
        out[present] = len(labels) / (present.sum() * counts[present])
        return out
    out = np.asarray(class_weights, dtype=float)
    if out.shape != (n_classes,) or np.any(out < 0):
        raise ValueError(f"class_weights must be {n_classes} nonnegative numbers")
    return out


def logistic_objective(W, b, X, y, l2: float = 0.0, sample_weight=None):
    """Mean weighted cross-entropy plus ``l2 * ||W||^2``; returns (loss, dW, db)."""
    n = X.shape[0]
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    logits = np.asarray(X @ W.T) + b
    logp = log_softmax(logits)
    loss = -np.sum(sw * logp[np.arange(n), y]) / n + l2 * np.sum(W * W)
    G = np.exp(logp)
    G[np.arange(n), y] -= 1.0
    G *= sw[:, None] / n
    dW = np.asarray(X.T @ G).T + 2.0 * l2 * W
    db = G.sum(axis=0)
    return loss, dW, db


def hinge_objective(w, b, X, y, l2: float = 0.0):
    """Mean ``max(0, 1 - s * (w.x + b))`` with ``s = 2y - 1``, plus ``l2 * ||w||^2``.

    Returns (loss, dw, db); at the kink the zero subgradient is used.
    """
    n = X.shape[0]
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    margins = s * (np.asarray(X @ w).ravel() + b)
    active = margins < 1.0
    loss = np.sum(1.0 - margins[active]) / n + l2 * np.dot(w, w)
    coef = np.where(active, -s, 0.0) / n
    dw = np.asarray(X.T @ coef).ravel() + 2.0 * l2 * w
    db = coef.sum()
    return loss, dw, db


def _as_matrix(features) -> sp.csr_matrix:
    if sp.issparse(features):
        return sp.csr_matrix(features)
    if isinstance(features, np.ndarray):
        return sp.csr_matrix(features)
    return to_csr(features)


def _check_hyper(lr: float, epochs: int, batch_size: int, l2: float) -> None:
    if not np.isfinite(lr) or lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if l2 < 0:
        raise ValueError(f"l2 must be >= 0, got {l2}")


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_logreg(
    features,
    labels: Sequence[int],
    lr: float = 0.5,
    epochs: int = 30,
    l2: float = 1e-5,
    seed: int = 0,
    class_weights=None,
    batch_size: int = 32,
) -> LinearModel:
    """Multinomial logistic regression from zero initialization.

    ``lr == 0`` is allowed and leaves the parameters at their initial
    value; negative rates are rejected. ``model.loss_history`` holds the
    full-data objective after each epoch.
    """
    _check_hyper(lr, epochs, batch_size, l2)
    X = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != len(y) or len(y) == 0:
        raise ValueError("features and labels must be nonempty and of equal length")
    cw = resolve_class_weights(class_weights, y)
    sw = cw[y]
    W = np.zeros((NUM_CLASSES, X.shape[1]))
    b = np.zeros(NUM_CLASSES)
    history = []
    for epoch in range(epochs):
        for idx in _batches(len(y), batch_size, seed, epoch):
            _, dW, db = logistic_objective(W, b, X[idx], y[idx], l2, sw[idx])
            W -= lr * dW
            b -= lr * db
        loss, _, _ = logistic_objective(W, b, X, y, l2, sw)
        if not np.isfinite(loss):
            raise FloatingPointError(f"logistic regression diverged at epoch {epoch + 1}")
        history.append(float(loss))
    return LinearModel(W, b, LOGISTIC, history)


def _binary_from_vector(w: np.ndarray, b: float, history) -> LinearModel:
    # Row 0 scores class 0, row 1 class 1; the margin is scores[1].
    return LinearModel(np.stack([-w, w]), np.array([-b, b]), HINGE, history)


def train_svm_binary(
    features,
    labels: Sequence[int],
    lr: float = 0.1,
    epochs: int = 30,
    l2: float = 1e-4,
    seed: int = 0,
    batch_size: int = 32,
) -> LinearModel:
    """Linear SVM (hinge loss, L2 penalty) on labels coded 0/1."""
    _check_hyper(lr, epochs, batch_size, l2)
    X = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != len(y):
        raise ValueError("features and labels must have equal length")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("binary SVM labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise DataError("binary SVM needs examples of both classes")
    w = np.zeros(X.shape[1])
    b = 0.0
    history = []
    for epoch in range(epochs):
        for idx in _batches(len(y), batch_size, seed, epoch):
            _, dw, db = hinge_objective(w, b, X[idx], y[idx], l2)
            w -= lr * dw
            b -= lr * db
        loss, _, _ = hinge_objective(w, b, X, y, l2)
        history.append(float(loss))
    return _binary_from_vector(w, b, history)


def margin(model: LinearModel, X) -> np.ndarray:
    """Signed distance-like score of a binary hinge model (positive = class 1)."""
    return model.scores(X)[:, 1]


def train_cascade(features, labels: Sequence[int], **hyper) -> CascadeModel:
    """Stage A on every document (non-clean coded 1), stage B on OFFENSIVE/HATE only."""
    X = _as_matrix(features)
    y = np.asarray(labels, dtype=np.int64)
    stage_a = train_svm_binary(X, (y != ClassLabel.CLEAN).astype(np.int64), **hyper)
    rest = np.flatnonzero(y != ClassLabel.CLEAN)
    stage_b = train_svm_binary(X[rest], (y[rest] == ClassLabel.HATE).astype(np.int64), **hyper)
    return CascadeModel(stage_a, stage_b)


def _single_row(x: SparseVector, n_features: int) -> sp.csr_matrix:
    if x.dim != n_features:
        raise ValueError(f"feature dimension {x.dim} != model dimension {n_features}")
    return to_csr([x])


def predict_linear(model: LinearModel, x: SparseVector) -> tuple[int, np.ndarray]:
    """Argmax class (ties to the lower code) and the score vector."""
    scores = model.scores(_single_row(x, model.n_features))[0]
    label = int(np.argmax(scores))
    if model.kind == LOGISTIC:
        return ClassLabel(label), scores
    return label, scores


def cascade_scores(cascade: CascadeModel, X) -> np.ndarray:
    """Per-document margins ``(-m_a, -m_b, m_b)`` for CLEAN, OFFENSIVE, HATE."""
    m_a = margin(cascade.stage_a, X)
    m_b = margin(cascade.stage_b, X)
    return np.stack([-m_a, -m_b, m_b], axis=1)


def cascade_decide(m_a: np.ndarray, m_b: np.ndarray) -> np.ndarray:
    # Zero margins fall to the lower class code at both stages.
    return np.where(m_a > 0, np.where(m_b > 0, ClassLabel.HATE, ClassLabel.OFFENSIVE), ClassLabel.CLEAN)


def cascade_predict(cascade: CascadeModel, x: SparseVector) -> ClassLabel:
    X = _single_row(x, cascade.n_features)
    return ClassLabel(int(cascade_decide(margin(cascade.stage_a, X), margin(cascade.stage_b, X))[0]))


def predict_batch(model: LinearModel | CascadeModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Labels and score rows for a batch of documents."""
    X = _as_matrix(X)
    if isinstance(model, CascadeModel):
        scores = cascade_scores(model, X)
        labels = cascade_decide(-scores[:, 0], scores[:, 2])
        return labels.astype(np.int64), scores
    scores = model.scores(X)
    return np.argmax(scores, axis=1), scores


# -- persistence -------------------------------------------------------------

def _write_block(fh, model: LinearModel) -> None:
    C, F = model.weights.shape
    fh.write(f"kind={model.kind}\nshape={C} {F}\n")
    fh.write("bias=" + " ".join(repr(float(v)) for v in model.bias) + "\n")
    for row in model.weights:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _read_block(lines: list[str], pos: int) -> tuple[LinearModel, int]:
    kind = lines[pos].split("=", 1)[1]
    C, F = (int(v) for v in lines[pos + 1].split("=", 1)[1].split())
    bias = np.array([float(v) for v in lines[pos + 2].split("=", 1)[1].split()])
    rows = [np.array([float(v) for v in lines[pos + 3 + c].split()]) if F else np.zeros(0) for c in range(C)]
    return LinearModel(np.stack(rows).reshape(C, F), bias, kind), pos + 3 + C


def save_model(model: LinearModel | CascadeModel, path: str | Path) -> None:
    """Text format: a version line, then ``kind``/``shape``/``bias`` and weight rows per block."""
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        if isinstance(model, CascadeModel):
            fh.write("#cascade v1\n")
            _write_block(fh, model.stage_a)
            _write_block(fh, model.stage_b)
        else:
            fh.write("#linear v1\n")
            _write_block(fh, model)


def load_model(path: str | Path) -> LinearModel | CascadeModel:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines[0] == "#linear v1":
        return _read_block(lines, 1)[0]
    if lines[0] == "#cascade v1":
        a, pos = _read_block(lines, 1)
        b, _ = _read_block(lines, pos)
        return CascadeModel(a, b)
    raise DataError(f"{path}: not a linear model file")

