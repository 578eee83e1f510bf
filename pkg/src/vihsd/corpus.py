"""Labeled comment datasets: CSV I/O, class statistics and train/held-out splits."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


class ClassLabel(enum.IntEnum):
    CLEAN = 0
    OFFENSIVE = 1
    HATE = 2


LABELS = tuple(ClassLabel)
NUM_CLASSES = len(LABELS)


def parse_label(value: str | int | ClassLabel) -> ClassLabel:
    """Accept a label code (``2``, ``"2"``) or a case-insensitive name (``"hate"``)."""
    if isinstance(value, ClassLabel):
        return value
    if isinstance(value, (int, np.integer)):
        try:
            return ClassLabel(int(value))
        except ValueError:
            raise DataError(f"unknown label {value!r}") from None
    text = str(value).strip()
    if text.isdigit():
        try:
            return ClassLabel(int(text))
        except ValueError:
            raise DataError(f"unknown label {value!r}") from None
    try:
        return ClassLabel[text.upper()]
    except KeyError:
        raise DataError(f"unknown label {value!r}") from None


@dataclass(frozen=True)
class LabeledDocument:
    id: str
    text: str
    label: ClassLabel | None = None


def check_unique_ids(docs: Iterable[LabeledDocument]) -> None:
    seen: set[str] = set()
    for doc in docs:
        if not doc.id:
            raise DataError("document id must be nonempty")
        if doc.id in seen:
            raise DataError(f"duplicate id {doc.id!r}")
        seen.add(doc.id)


def load_csv(path: str | Path, has_labels: bool | None = True) -> list[LabeledDocument]:
    """Read an ``id,text[,label]`` CSV file (UTF-8, RFC 4180 quoting).

    Rows are returned in file order. When ``has_labels`` is false a label
    column, if present, is ignored. ``None`` reads labels when the column
    exists and leaves blank label cells unset.
    """
    path = Path(path)
    docs: list[LabeledDocument] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return docs
        header = [h.strip().lstrip("﻿") for h in header]
        if header[:2] != ["id", "text"]:
            raise DataError(f"{path}: header must start with 'id,text', got {','.join(header)!r}")
        if has_labels and (len(header) < 3 or header[2] != "label"):
            raise DataError(f"{path}: labeled file needs an 'id,text,label' header")
        ncols = len(header)
        auto = has_labels is None
        if auto:
            has_labels = len(header) >= 3 and header[2] == "label"
        seen: set[str] = set()
        for row in reader:
            rowno = reader.line_num
            if not row:
                continue
            if len(row) != ncols:
                raise DataError(f"{path}: row {rowno} has {len(row)} columns, expected {ncols}")
            doc_id = row[0]
            if not doc_id:
                raise DataError(f"{path}: row {rowno} has an empty id")
            if doc_id in seen:
                raise DataError(f"{path}: duplicate id {doc_id!r} at row {rowno}")
            seen.add(doc_id)
            label = None
            if has_labels and not (auto and not row[2].strip()):
                try:
                    label = parse_label(row[2])
                except DataError:
                    raise DataError(f"{path}: row {rowno}: unknown label {row[2]!r}") from None
            docs.append(LabeledDocument(doc_id, row[1], label))
    return docs


def write_csv(path: str | Path, docs: Sequence[LabeledDocument], with_labels: bool | None = None) -> None:
    """Write documents so that :func:`load_csv` reads them back unchanged.

    ``with_labels`` defaults to whether every document carries a label.
    """
    check_unique_ids(docs)
    if with_labels is None:
        with_labels = bool(docs) and all(d.label is not None for d in docs)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["id", "text", "label"] if with_labels else ["id", "text"])
        for d in docs:
            if with_labels:
                if d.label is None:
                    raise DataError(f"document {d.id!r} has no label")
                writer.writerow([d.id, d.text, int(d.label)])
            else:
                writer.writerow([d.id, d.text])


@dataclass(frozen=True)
class ClassDistribution:
    counts: dict[ClassLabel, int]
    total: int
    percentages: dict[ClassLabel, float] = field(default_factory=dict)

    def display_percentages(self) -> dict[ClassLabel, str]:
        """Percentages at two decimals, rounded so that the shown values add up to 100.

        Each class gets its value truncated to hundredths; the missing
        hundredths go to the classes with the largest remainders.
        """
        if not self.total:
            return {lab: "0.00" for lab in LABELS}
        # integer arithmetic in units of 1/100 percent
        scaled = [self.counts[lab] * 10000 for lab in LABELS]
        units = [s // self.total for s in scaled]
        rems = [s % self.total for s in scaled]
        order = sorted(range(len(LABELS)), key=lambda k: (-rems[k], k))
        for k in order[: 10000 - sum(units)]:
            units[k] += 1
        return {lab: f"{u // 100}.{u % 100:02d}" for lab, u in zip(LABELS, units)}

    def table(self) -> str:
        """Fixed-width frequency/percentage table, one column per class plus total."""
        names = [lab.name for lab in LABELS] + ["TOTAL"]
        freq = [str(self.counts[lab]) for lab in LABELS] + [str(self.total)]
        shown = self.display_percentages()
        pct = [f"{shown[lab]}%" for lab in LABELS]
        pct.append("100%" if self.total else "0%")
        widths = [max(len(n), len(f), len(p)) + 2 for n, f, p in zip(names, freq, pct)]
        lines = [
            f"{'':<12}" + "".join(n.rjust(w) for n, w in zip(names, widths)),
            f"{'Frequency':<12}" + "".join(f.rjust(w) for f, w in zip(freq, widths)),
            f"{'Percentage':<12}" + "".join(p.rjust(w) for p, w in zip(pct, widths)),
        ]
        return "\n".join(lines)


def class_stats(docs: Sequence[LabeledDocument]) -> ClassDistribution:
    unlabeled = [d.id for d in docs if d.label is None]
    if unlabeled:
        shown = ", ".join(unlabeled[:5])
        raise DataError(f"{len(unlabeled)} unlabeled document(s): {shown}")
    counts = {lab: 0 for lab in LABELS}
    for d in docs:
        counts[d.label] += 1
    total = len(docs)
    percentages = {lab: (counts[lab] / total if total else 0.0) for lab in LABELS}
    return ClassDistribution(counts, total, percentages)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[LabeledDocument]
    held_out: list[LabeledDocument]
    seed: int
    ratio: float


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _apportion(sizes: Sequence[int], ratio: float) -> list[int]:
    # Largest-remainder allocation: every class gets floor or ceil of its
    # quota and the total equals round(ratio * N).
    target = _round_half_up(ratio * sum(sizes))
    quotas = [ratio * n for n in sizes]
    alloc = [math.floor(q) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda k: (-(quotas[k] - alloc[k]), k))
    for k in order[: target - sum(alloc)]:
        alloc[k] += 1
    return alloc


def split(
    docs: Sequence[LabeledDocument],
    ratio: float = 0.8,
    seed: int = 0,
    stratified: bool = True,
) -> DatasetSplit:
    """Deterministic train/held-out partition.

    Both parts keep the input order. With ``stratified`` each class
    contributes ``floor`` or ``ceil`` of ``ratio * n_class`` documents to
    the training part.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    n = len(docs)
    if stratified:
        unlabeled = [d.id for d in docs if d.label is None]
        if unlabeled:
            raise DataError(f"stratified split needs labels; unlabeled: {', '.join(unlabeled[:5])}")
        groups = [[i for i, d in enumerate(docs) if d.label == lab] for lab in LABELS]
        alloc = _apportion([len(g) for g in groups], ratio)
        chosen: list[int] = []
        for group, k in zip(groups, alloc):
            perm = rng.permutation(len(group))
            chosen.extend(group[j] for j in perm[:k])
    else:
        chosen = list(rng.permutation(n)[: _round_half_up(ratio * n)])
    in_train = np.zeros(n, dtype=bool)
    in_train[chosen] = True
    train = [d for d, t in zip(docs, in_train) if t]
    held_out = [d for d, t in zip(docs, in_train) if not t]
    return DatasetSplit(train, held_out, seed, ratio)
