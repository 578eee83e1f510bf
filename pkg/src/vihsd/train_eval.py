"""Training loop, optimizers and the evaluation harness."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import LABELS, NUM_CLASSES
from .linear import resolve_class_weights
from .recurrent import RecurrentClassifier

log = logging.getLogger(__name__)

SGD_NAME = "sgd"
ADAM_NAME = "adam"


class NumericError(FloatingPointError):
    """A loss or gradient became non-finite during training."""


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.005
    optimizer: str = ADAM_NAME
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    class_weights: object = None  # None, "balanced" or three floats
    early_stop_patience: int | None = None
    precision_mode: str = "double"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # Zero is accepted as an explicit no-op run.
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.optimizer not in (SGD_NAME, ADAM_NAME):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.precision_mode not in ("double", "single"):
            raise ValueError(f"unknown precision mode {self.precision_mode!r}")

    @property
    def dtype(self):
        return np.float64 if self.precision_mode == "double" else np.float32


def cross_entropy(probabilities, gold: int, weight: float = 1.0) -> float:
    p = max(float(probabilities[gold]), 1e-12)
    return -weight * math.log(p)


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in tensor {name!r}")


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check_finite(grads)
        for name, g in grads.items():
            params[name] -= self.lr * g


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        _check_finite(grads)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(config: TrainConfig):
    if config.optimizer == SGD_NAME:
        return SGD(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.eps)


# -- metrics -------------------------------------------------------------------

@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows gold, columns predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_p: float
    macro_r: float
    macro_f1: float
    weighted_f1: float
    accuracy: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def as_dict(self) -> dict:
        out = {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_p,
            "macro_recall": self.macro_r,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
        }
        for lab in LABELS:
            k = lab.name.lower()
            out[f"precision_{k}"] = float(self.precision[lab])
            out[f"recall_{k}"] = float(self.recall[lab])
            out[f"f1_{k}"] = float(self.f1[lab])
            out[f"support_{k}"] = int(self.support[lab])
        out["confusion"] = self.confusion.tolist()
        return out

    def render(self) -> str:
        names = [lab.name for lab in LABELS]
        lines = ["confusion (rows = gold, columns = predicted)"]
        lines.append(f"{'':<11}" + "".join(f"{n:>11}" for n in names))
        for lab, row in zip(names, self.confusion):
            lines.append(f"{lab:<11}" + "".join(f"{int(v):>11}" for v in row))
        lines.append("")
        lines.append(f"{'class':<11}{'precision':>11}{'recall':>11}{'f1':>11}{'support':>11}")
        for lab in LABELS:
            lines.append(
                f"{lab.name:<11}{self.precision[lab]:>11.4f}{self.recall[lab]:>11.4f}"
                f"{self.f1[lab]:>11.4f}{int(self.support[lab]):>11}"
            )
        lines.append(f"{'macro':<11}{self.macro_p:>11.4f}{self.macro_r:>11.4f}{self.macro_f1:>11.4f}{self.total:>11}")
        lines.append(f"{'weighted':<11}{'':>11}{'':>11}{self.weighted_f1:>11.4f}{self.total:>11}")
        lines.append(f"accuracy   {self.accuracy:.4f}")
        return "\n".join(lines)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros(len(num)), where=den != 0)


def evaluate(predictions: Sequence[int], gold: Sequence[int]) -> MetricsReport:
    """Confusion matrix plus per-class, macro and support-weighted scores.

    Macro averages run over all three classes, absent ones included as 0.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(gold, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"{len(pred)} predictions for {len(true)} gold labels")
    if len(true) == 0:
        raise ValueError("cannot evaluate an empty set")
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    tp = np.diag(confusion).astype(float)
    predicted = confusion.sum(axis=0).astype(float)
    support = confusion.sum(axis=1)
    undefined = [
        f"{what} of {LABELS[k].name}"
        for what, den in (("precision", predicted), ("recall", support))
        for k in np.flatnonzero(den == 0)
    ]
    if undefined:
        warnings.warn(f"0/0 set to 0: {', '.join(undefined)}", RuntimeWarning, stacklevel=2)
    precision = _safe_ratio(tp, predicted)
    recall = _safe_ratio(tp, support.astype(float))
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(NUM_CLASSES), where=denom > 0)
    return MetricsReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        macro_p=float(precision.mean()),
        macro_r=float(recall.mean()),
        macro_f1=float(f1.mean()),
        weighted_f1=float(np.dot(f1, support) / support.sum()),
        accuracy=float(tp.sum() / len(true)),
    )


# -- recurrent training --------------------------------------------------------

@dataclass
class EncodedDataset:
    ids: np.ndarray  # (N, max_len)
    lengths: np.ndarray  # (N,)
    labels: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.lengths)

    def subset(self, idx) -> "EncodedDataset":
        return EncodedDataset(self.ids[idx], self.lengths[idx], self.labels[idx])


@dataclass
class RunRecord:
    model_name: str
    config: dict
    losses: list[float]
    metrics: MetricsReport | None = None
    train_metrics: MetricsReport | None = None
    wall_seconds: float = 0.0
    seed: int = 0
    failed: str | None = None
    extra: dict = field(default_factory=dict)


def predict_labels(model: RecurrentClassifier, data: EncodedDataset, batch_size: int = 256) -> np.ndarray:
    probs = model.predict_proba(data.ids, data.lengths, batch_size)
    return np.argmax(probs, axis=1)


def train(
    model: RecurrentClassifier,
    dataset: EncodedDataset,
    config: TrainConfig,
    validation: EncodedDataset | None = None,
    name: str = "model",
) -> tuple[RecurrentClassifier, RunRecord]:
    """Mini-batch training with a per-(seed, epoch) shuffle.

    Returns a trained copy of ``model``. With ``early_stop_patience`` and a
    validation set, training stops once validation macro F1 has not improved
    for that many epochs and the best parameters are restored.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    start = time.perf_counter()
    model = model.astype(config.dtype)
    optimizer = make_optimizer(config)
    weights = resolve_class_weights(config.class_weights, dataset.labels).astype(config.dtype)
    losses: list[float] = []
    best_f1, best_params, stale = -1.0, None, 0
    n = len(dataset)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            batch = dataset.subset(idx)
            _, cache = model.forward_batch(batch.ids, batch.lengths)
            loss, grads = model.backward_batch(cache, batch.labels, weights[batch.labels])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch + 1}, batch starting {s}")
            optimizer.step(model.params, grads)
            total += loss * len(idx)
        losses.append(total / n)
        log.info("%s epoch %d loss %.6f", name, epoch + 1, losses[-1])
        if config.early_stop_patience is not None and validation is not None and len(validation):
            f1 = evaluate(predict_labels(model, validation), validation.labels).macro_f1
            if f1 > best_f1:
                best_f1, best_params, stale = f1, {k: v.copy() for k, v in model.params.items()}, 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    break
    if best_params is not None:
        model.params.update(best_params)
    record = RunRecord(
        model_name=name,
        config=dict(vars(config)),
        losses=losses,
        wall_seconds=time.perf_counter() - start,
        seed=config.seed,
    )
    return model, record


# -- comparison ----------------------------------------------------------------

@dataclass
class ComparisonTable:
    rows: list[tuple[str, float | None]]  # (model name, score in [0, 1] or None for failures)
    metric: str = "macro_f1"

    @classmethod
    def from_scores(cls, scores, metric: str = "macro_f1") -> "ComparisonTable":
        """``scores``: mapping or sequence of ``(name, score)``; ``None`` marks a failed run."""
        items = list(scores.items()) if isinstance(scores, dict) else list(scores)
        ranked = sorted(items, key=lambda kv: (kv[1] is None, -(kv[1] or 0.0), kv[0]))
        return cls(ranked, metric)

    def names(self) -> list[str]:
        return [name for name, _ in self.rows]

    def render(self) -> str:
        width = max([len("Model")] + [len(n) for n, _ in self.rows]) + 2
        header = "F1-Score" if self.metric == "macro_f1" else f"{self.metric}"
        lines = [f"{'Model':<{width}}| {header}", "-" * width + "+" + "-" * (len(header) + 2)]
        for name, score in self.rows:
            shown = "failed" if score is None else f"{100 * score:.2f}"
            lines.append(f"{name:<{width}}| {shown:>{len(header)}}")
        return "\n".join(lines)


def compare(run_records: Sequence[RunRecord], metric: str = "macro_f1") -> ComparisonTable:
    """Rank runs by held-out macro (or weighted) F1; ties keep name order."""
    if not run_records:
        raise ValueError("nothing to compare")
    if metric not in ("macro_f1", "weighted_f1"):
        raise ValueError(f"unknown ranking metric {metric!r}")
    scores = [
        (r.model_name, None if r.failed or r.metrics is None else getattr(r.metrics, metric))
        for r in run_records
    ]
    return ComparisonTable.from_scores(scores, metric)
