"""End-to-end pipeline stages behind the command-line interface.

Configuration is an INI-style file (``key = value`` under sections)::

    [paths]
    train = data/train.csv
    eval = data/dev.csv          ; optional, otherwise a split of train
    embeddings = cc.vi.300.vec   ; optional
    stopwords = stopwords.txt    ; optional
    out = runs/bilstm

    [model]
    kind = bilstm                ; lr | svm_cascade | gru | bilstm | lstm

    [train]
    epochs = 15
    seed = 0

    [bilstm]                     ; per-model overrides of [model]/[train] keys
    learning_rate = 0.003

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import time
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import linear, tfidf
from .corpus import LABELS, DataError, LabeledDocument, class_stats, load_csv, split
from .preprocess import PreprocessConfig, load_stopwords, normalize
from .recurrent import FINAL_STATE, RecurrentClassifier, load_checkpoint, save_checkpoint
from .train_eval import (
    ComparisonTable,
    EncodedDataset,
    MetricsReport,
    RunRecord,
    TrainConfig,
    compare,
    evaluate,
    train,
)
from .vocab import DEFAULT_MAX_LEN, Vocabulary, build_vocab, encode_batch, load_embeddings, random_embeddings

log = logging.getLogger(__name__)

LINEAR_KINDS = ("lr", "svm_cascade")
RECURRENT_KINDS = ("gru", "bilstm", "lstm")
MODEL_KINDS = LINEAR_KINDS + RECURRENT_KINDS
BASELINE_MODELS = ("svm_cascade", "lr", "gru", "bilstm")

# Per-family training defaults; anything in the config file wins.
MODEL_DEFAULTS = {
    "lr": {"optimizer": "sgd", "learning_rate": 0.5, "epochs": 30, "l2": 1e-5},
    "svm_cascade": {"optimizer": "sgd", "learning_rate": 0.1, "epochs": 30, "l2": 1e-4},
    "gru": {},
    "bilstm": {},
    "lstm": {},
}


def default_config_path() -> Path:
    """The bundled ``default.ini``; it spells out the built-in defaults."""
    return Path(str(resources.files("vihsd").joinpath("data/default.ini")))


class ConfigError(ValueError):
    """Invalid or inconsistent pipeline configuration."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    train_path: Path | None = None
    eval_path: Path | None = None
    embeddings_path: Path | None = None
    stopwords_path: Path | None = None
    out_dir: Path = Path("runs")
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    min_freq: int = 1
    max_size: int | None = None
    max_len: int = DEFAULT_MAX_LEN
    kind: str = "bilstm"
    name: str | None = None
    hidden_size: int = 128
    embed_dim: int = 100
    pooling: str = FINAL_STATE
    trainable_embedding: bool = True
    l2: float = 0.0
    min_df: int = 1
    split_ratio: float = 0.8
    stratified: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def label(self) -> str:
        return self.name or self.kind


_PREPROCESS_KEYS = {f.name for f in fields(PreprocessConfig)}
_PATH_KEYS = {"train", "eval", "embeddings", "stopwords", "out"}


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def _parse_optional_int(value: str) -> int | None:
    v = value.strip().lower()
    return None if v in ("", "none") else int(v)


def _parse_class_weights(value: str):
    v = value.strip().lower()
    if v in ("", "none"):
        return None
    if v == "balanced":
        return "balanced"
    parts = [float(p) for p in v.replace(",", " ").split()]
    if len(parts) != 3:
        raise ConfigError("class_weights needs three numbers, 'balanced' or 'none'")
    return tuple(parts)


_TRAIN_PARSERS = {
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "optimizer": str,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "seed": int,
    "class_weights": _parse_class_weights,
    "early_stop_patience": _parse_optional_int,
    "precision_mode": str,
}
_MODEL_PARSERS = {
    "kind": str,
    "name": str,
    "hidden_size": int,
    "embed_dim": int,
    "pooling": str,
    "trainable_embedding": _parse_bool,
    "l2": float,
    "min_df": int,
    "min_freq": int,
    "max_size": _parse_optional_int,
    "max_len": int,
    "split_ratio": float,
    "ratio": float,
    "stratified": _parse_bool,
}


def load_config(
    path: str | Path | None = None,
    kind: str | None = None,
    seed: int | None = None,
    precision: str | None = None,
    out: str | Path | None = None,
) -> PipelineConfig:
    """Resolve defaults, family defaults, file sections and overrides, in that order."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        base = path.parent
    known = {"paths", "preprocess", "vocab", "model", "train", "split"} | set(MODEL_KINDS)
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown config section [{section}]")

    model_kind = kind or parser.get("model", "kind", fallback="bilstm").strip()
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model_kind!r}; choose from {', '.join(MODEL_KINDS)}")

    settings: dict[str, str] = {}
    for key, value in MODEL_DEFAULTS[model_kind].items():
        settings[key] = str(value)
    for section in ("vocab", "model", "train", "split", model_kind):
        if parser.has_section(section):
            for key, value in parser.items(section):
                settings[key] = value
    settings["kind"] = model_kind

    train_kwargs, cfg_kwargs = {}, {}
    for key, value in settings.items():
        try:
            if key in _TRAIN_PARSERS:
                train_kwargs[key] = _TRAIN_PARSERS[key](value)
            elif key in _MODEL_PARSERS:
                cfg_kwargs["split_ratio" if key == "ratio" else key] = _MODEL_PARSERS[key](value)
            else:
                raise ConfigError(f"unknown setting {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None
    if seed is not None:
        train_kwargs["seed"] = seed
    if precision is not None:
        train_kwargs["precision_mode"] = precision

    pre_kwargs = {}
    if parser.has_section("preprocess"):
        for key, value in parser.items("preprocess"):
            if key not in _PREPROCESS_KEYS:
                raise ConfigError(f"unknown preprocess setting {key!r}")
            if key == "replace_empty":
                pre_kwargs[key] = value.strip().strip('"')
            elif key == "stopwords":
                pre_kwargs[key] = frozenset(value.split())
            else:
                pre_kwargs[key] = _parse_bool(value)

    paths = {}
    if parser.has_section("paths"):
        for key, value in parser.items("paths"):
            if key not in _PATH_KEYS:
                raise ConfigError(f"unknown path setting {key!r}")
            if value.strip():
                paths[key] = (base / value.strip()).resolve()
    for key in ("train", "eval", "embeddings", "stopwords"):
        if key in paths and not paths[key].exists():
            raise ConfigError(f"{key} path does not exist: {paths[key]}")
    if "stopwords" in paths:
        extra = load_stopwords(paths["stopwords"])
        pre_kwargs["stopwords"] = frozenset(pre_kwargs.get("stopwords", frozenset())) | extra

    try:
        train_cfg = TrainConfig(**train_kwargs)
        cfg = PipelineConfig(
            train_path=paths.get("train"),
            eval_path=paths.get("eval"),
            embeddings_path=paths.get("embeddings"),
            stopwords_path=paths.get("stopwords"),
            out_dir=Path(out) if out is not None else paths.get("out", Path("runs") / model_kind),
            preprocess=PreprocessConfig(**pre_kwargs),
            train=train_cfg,
            **cfg_kwargs,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.pooling not in ("final_state", "mean_over_time"):
        raise ConfigError(f"unknown pooling {cfg.pooling!r}")
    if not 0 < cfg.split_ratio < 1:
        raise ConfigError("split_ratio must lie in (0, 1)")
    return cfg


def config_snapshot(cfg: PipelineConfig) -> dict[str, dict[str, str]]:
    """Flat, fully resolved view of a config, as written next to trained models."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return " ".join(repr(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)

    pre = cfg.preprocess
    return {
        "preprocess": {
            "lowercase": fmt(pre.lowercase),
            "strip_urls": fmt(pre.strip_urls),
            "strip_mentions": fmt(pre.strip_mentions),
            "strip_non_alphabetic": fmt(pre.strip_non_alphabetic),
            "collapse_whitespace": fmt(pre.collapse_whitespace),
            "replace_empty": '"' + pre.replace_empty + '"',
            "stopwords": " ".join(sorted(pre.stopwords)),
        },
        "vocab": {"min_freq": fmt(cfg.min_freq), "max_size": fmt(cfg.max_size), "max_len": fmt(cfg.max_len)},
        "model": {
            "kind": cfg.kind,
            "hidden_size": fmt(cfg.hidden_size),
            "embed_dim": fmt(cfg.embed_dim),
            "pooling": cfg.pooling,
            "trainable_embedding": fmt(cfg.trainable_embedding),
            "l2": fmt(cfg.l2),
            "min_df": fmt(cfg.min_df),
        },
        "train": {f.name: fmt(getattr(cfg.train, f.name)) for f in fields(TrainConfig)},
        "split": {"split_ratio": fmt(cfg.split_ratio), "stratified": fmt(cfg.stratified)},
    }


def write_snapshot(cfg: PipelineConfig, path: Path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(config_snapshot(cfg))
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)


# -- stats ---------------------------------------------------------------------

def run_stats(csv_path: str | Path):
    docs = load_csv(csv_path, has_labels=None)
    if not docs:
        raise DataError(f"{csv_path}: dataset is empty")
    return class_stats(docs)


# -- training ------------------------------------------------------------------

@dataclass
class TrainedPipeline:
    cfg: PipelineConfig
    model: object  # LinearModel | CascadeModel | RecurrentClassifier
    vocab: Vocabulary | None = None
    features: tfidf.TfidfModel | None = None

    def scores(self, token_lists: Sequence[Sequence[str]]) -> tuple[np.ndarray, np.ndarray]:
        """Predicted labels and score rows (probabilities, or margins for the cascade)."""
        if self.features is not None:
            X = tfidf.to_csr([self.features.transform(t) for t in token_lists], self.features.dim)
            return linear.predict_batch(self.model, X)
        ids, lengths = encode_batch(token_lists, self.vocab, self.cfg.max_len)
        probs = self.model.predict_proba(ids, lengths)
        return np.argmax(probs, axis=1), probs


def _labels(docs: Sequence[LabeledDocument]) -> np.ndarray:
    missing = [d.id for d in docs if d.label is None]
    if missing:
        raise DataError(f"training/evaluation documents need labels; first unlabeled: {missing[0]}")
    return np.array([int(d.label) for d in docs], dtype=np.int64)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (StageError, FloatingPointError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def fit_pipeline(
    cfg: PipelineConfig, train_docs: Sequence[LabeledDocument], held_docs: Sequence[LabeledDocument]
) -> tuple[TrainedPipeline, RunRecord]:
    """Preprocess, featurize and train one model on a fixed split."""
    start = time.perf_counter()
    if not train_docs:
        raise StageError("split", DataError("training set is empty"))
    y_train = _stage("labels", _labels, train_docs)
    y_held = _stage("labels", _labels, held_docs) if held_docs else np.zeros(0, dtype=np.int64)
    tok_train = _stage("preprocess", lambda: [normalize(d.text, cfg.preprocess) for d in train_docs])
    tok_held = _stage("preprocess", lambda: [normalize(d.text, cfg.preprocess) for d in held_docs])
    tc = cfg.train
    extra = {}
    if cfg.kind in LINEAR_KINDS:
        feats = _stage("tfidf", tfidf.fit, tok_train, cfg.min_df)
        X = tfidf.to_csr([feats.transform(t) for t in tok_train], feats.dim)
        hyper = dict(lr=tc.learning_rate, epochs=tc.epochs, l2=cfg.l2, seed=tc.seed, batch_size=tc.batch_size)
        if cfg.kind == "lr":
            model = _stage("train", linear.train_logreg, X, y_train, class_weights=tc.class_weights, **hyper)
            losses = model.loss_history
        else:
            model = _stage("train", linear.train_cascade, X, y_train, **hyper)
            losses = model.stage_a.loss_history
            extra["stage_b_losses"] = model.stage_b.loss_history
        trained = TrainedPipeline(cfg, model, features=feats)
        record = RunRecord(cfg.label, {}, list(losses), seed=tc.seed)
    else:
        vocab = _stage("vocab", build_vocab, tok_train, cfg.min_freq, cfg.max_size)
        if cfg.embeddings_path is not None:
            emb = _stage("embeddings", load_embeddings, cfg.embeddings_path, vocab, None, tc.seed)
            extra["embedding_coverage"] = emb.coverage
        else:
            emb = random_embeddings(vocab, cfg.embed_dim, tc.seed)
        model = RecurrentClassifier.create(
            emb,
            cell_kind="gru" if cfg.kind == "gru" else "lstm",
            hidden_size=cfg.hidden_size,
            bidirectional=cfg.kind == "bilstm",
            pooling=cfg.pooling,
            trainable_embedding=cfg.trainable_embedding,
            seed=tc.seed,
        )
        ids, lengths = encode_batch(tok_train, vocab, cfg.max_len)
        data = EncodedDataset(ids, lengths, y_train)
        validation = None
        if len(held_docs):
            vids, vlen = encode_batch(tok_held, vocab, cfg.max_len)
            validation = EncodedDataset(vids, vlen, y_held)
        model, record = _stage("train", train, model, data, tc, validation, cfg.label)
        trained = TrainedPipeline(cfg, model, vocab=vocab)
    record.model_name = cfg.label
    record.config = {sec: dict(vals) for sec, vals in config_snapshot(cfg).items()}
    record.extra.update(extra)
    pred_train, _ = trained.scores(tok_train)
    record.train_metrics = evaluate(pred_train, y_train)
    if len(held_docs):
        pred_held, _ = trained.scores(tok_held)
        record.metrics = evaluate(pred_held, y_held)
    record.wall_seconds = time.perf_counter() - start
    return trained, record


def load_split(cfg: PipelineConfig) -> tuple[list[LabeledDocument], list[LabeledDocument]]:
    if cfg.train_path is None:
        raise ConfigError("no training csv configured ([paths] train)")
    docs = _stage("load", load_csv, cfg.train_path, True)
    if cfg.eval_path is not None:
        return docs, _stage("load", load_csv, cfg.eval_path, True)
    parts = _stage("split", split, docs, cfg.split_ratio, cfg.train.seed, cfg.stratified)
    return parts.train, parts.held_out


def save_pipeline(trained: TrainedPipeline, record: RunRecord, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot(trained.cfg, out_dir / "config.ini")
    if trained.features is not None:
        trained.features.save(out_dir / "tfidf.tsv")
        linear.save_model(trained.model, out_dir / "model.txt")
    else:
        trained.vocab.save(out_dir / "vocab.txt")
        save_checkpoint(trained.model, out_dir / "model.ckpt")
    write_run_record(record, out_dir)


def load_pipeline(model_dir: str | Path) -> TrainedPipeline:
    model_dir = Path(model_dir)
    cfg = load_config(model_dir / "config.ini", out=model_dir)
    if cfg.kind in LINEAR_KINDS:
        feats = tfidf.TfidfModel.load(model_dir / "tfidf.tsv")
        model = linear.load_model(model_dir / "model.txt")
        is_cascade = isinstance(model, linear.CascadeModel)
        if is_cascade != (cfg.kind == "svm_cascade"):
            raise DataError(f"{model_dir}: model file does not match kind {cfg.kind!r}")
        if model.n_features != feats.dim:
            raise DataError(f"{model_dir}: model expects {model.n_features} features, tfidf has {feats.dim}")
        return TrainedPipeline(cfg, model, features=feats)
    vocab = Vocabulary.load(model_dir / "vocab.txt")
    model = load_checkpoint(model_dir / "model.ckpt")
    if model.vocab_size != len(vocab):
        raise DataError(f"{model_dir}: checkpoint has {model.vocab_size} embedding rows, vocabulary has {len(vocab)}")
    expected = ("gru" if cfg.kind == "gru" else "lstm", cfg.kind == "bilstm")
    if (model.cell_kind, model.bidirectional) != expected:
        raise DataError(f"{model_dir}: checkpoint architecture does not match kind {cfg.kind!r}")
    return TrainedPipeline(cfg, model, vocab=vocab)


def run_train(cfg: PipelineConfig) -> tuple[TrainedPipeline, RunRecord]:
    train_docs, held_docs = load_split(cfg)
    trained, record = fit_pipeline(cfg, train_docs, held_docs)
    save_pipeline(trained, record, cfg.out_dir)
    return trained, record


# -- run records ---------------------------------------------------------------

def _metric_lines(prefix: str, report: MetricsReport | None) -> list[str]:
    if report is None:
        return []
    out = []
    for key, value in report.as_dict().items():
        if key == "confusion":
            value = ";".join(" ".join(str(v) for v in row) for row in value)
        out.append(f"{prefix}.{key} = {value!r}" if isinstance(value, float) else f"{prefix}.{key} = {value}")
    return out


def run_record_dict(record: RunRecord) -> dict:
    return {
        "model": record.model_name,
        "seed": record.seed,
        "epochs_run": len(record.losses),
        "losses": record.losses,
        "heldout": record.metrics.as_dict() if record.metrics else None,
        "train": record.train_metrics.as_dict() if record.train_metrics else None,
        "config": record.config,
        "extra": record.extra,
        "failed": record.failed,
        "wall_clock_seconds_nonreproducible": record.wall_seconds,
    }


def write_run_record(record: RunRecord, out_dir: Path) -> None:
    """``run_record.txt`` (key = value lines) and ``run_record.json``.

    Only the line/key marked ``nonreproducible`` varies between identical runs.
    """
    lines = ["# run record v1", f"model = {record.model_name}", f"seed = {record.seed}",
             f"epochs_run = {len(record.losses)}"]
    lines += [f"loss.{k} = {v!r}" for k, v in enumerate(record.losses, start=1)]
    lines += _metric_lines("heldout", record.metrics)
    lines += _metric_lines("train", record.train_metrics)
    for key, value in sorted(record.extra.items()):
        lines.append(f"extra.{key} = {value!r}")
    for section, values in record.config.items():
        lines += [f"config.{section}.{k} = {v}" for k, v in values.items()]
    lines.append(f"wall_clock_seconds = {record.wall_seconds:.3f}  # nonreproducible")
    (out_dir / "run_record.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with (out_dir / "run_record.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(run_record_dict(record), fh, indent=1, sort_keys=True)
        fh.write("\n")


# -- prediction / evaluation ---------------------------------------------------

PREDICTION_HEADER = ["id", "predicted", "score_clean", "score_offensive", "score_hate"]


def run_predict(model_dir: str | Path, input_csv: str | Path, output_csv: str | Path) -> int:
    """Write one prediction row per input row, in input order; returns the row count."""
    trained = load_pipeline(model_dir)
    docs = load_csv(input_csv, has_labels=False)
    tokens = [normalize(d.text, trained.cfg.preprocess) for d in docs]
    if docs:
        labels, scores = trained.scores(tokens)
    else:
        labels, scores = np.zeros(0, dtype=np.int64), np.zeros((0, 3))
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite prediction scores")
    with Path(output_csv).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(PREDICTION_HEADER)
        for doc, lab, row in zip(docs, labels, scores):
            writer.writerow([doc.id, int(lab)] + [repr(float(v)) for v in row])
    return len(docs)


def load_predictions(path: str | Path) -> dict[str, int]:
    out: dict[str, int] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "predicted"]:
            raise DataError(f"{path}: expected a predictions csv starting with 'id,predicted'")
        for row in reader:
            if not row:
                continue
            if row[0] in out:
                raise DataError(f"{path}: duplicate id {row[0]!r}")
            try:
                out[row[0]] = int(LABELS[int(row[1])])
            except (ValueError, IndexError):
                raise DataError(f"{path}: row {reader.line_num}: bad predicted label {row[1]!r}") from None
    return out


def run_eval(gold_csv: str | Path, predictions_csv: str | Path) -> MetricsReport:
    gold_docs = load_csv(gold_csv, has_labels=True)
    preds = load_predictions(predictions_csv)
    gold_ids = [d.id for d in gold_docs]
    missing = [i for i in gold_ids if i not in preds]
    unknown = sorted(set(preds) - set(gold_ids))
    if missing or unknown:
        offenders = (missing + unknown)[:5]
        raise DataError(
            f"id sets differ ({len(missing)} gold ids without prediction, {len(unknown)} unknown predicted ids); "
            f"first offenders: {', '.join(offenders)}"
        )
    if not gold_docs:
        raise DataError(f"{gold_csv}: no documents to evaluate")
    return evaluate([preds[i] for i in gold_ids], [int(d.label) for d in gold_docs])


# -- comparison ----------------------------------------------------------------

def run_compare(configs: Sequence[PipelineConfig], out_root: Path | None = None) -> tuple[ComparisonTable, list[RunRecord]]:
    """Train every config on one shared split (taken from the first config)."""
    if not configs:
        raise ConfigError("compare needs at least one config")
    train_docs, held_docs = load_split(configs[0])
    if not held_docs:
        raise DataError("comparison needs a nonempty held-out set")
    records = []
    used_names: dict[str, int] = {}
    for cfg in configs:
        name = cfg.label
        used_names[name] = used_names.get(name, 0) + 1
        sub = name if used_names[name] == 1 else f"{name}_{used_names[name]}"
        try:
            trained, record = fit_pipeline(cfg, train_docs, held_docs)
            if out_root is not None:
                save_pipeline(trained, record, out_root / sub)
        except (StageError, FloatingPointError, ValueError) as exc:
            log.error("%s failed: %s", name, exc)
            record = RunRecord(name, {}, [], seed=cfg.train.seed, failed=str(exc))
        records.append(record)
    return compare(records), records
