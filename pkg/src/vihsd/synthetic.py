"""Synthetic corpora with known structure, used for end-to-end checks."""

from __future__ import annotations

import numpy as np

from .corpus import ClassLabel, LabeledDocument

FILLERS = (
    "phim", "này", "thật", "sự", "rất", "quá", "hôm", "nay", "mình", "thấy",
    "bạn", "ấy", "nói", "cũng", "khá", "lắm", "đi", "xem", "nhà", "hàng",
)
NEGATION = "không"
MARKERS = ("tốt", "đẹp")


def negation_order_corpus(
    n: int, seed: int = 0, length: int = 6, prefix: str = "s", n_classes: int = 2
) -> list[LabeledDocument]:
    """Sentences of fillers plus a negation word and one or two marker words.

    Two classes: OFFENSIVE when the negation precedes the marker, else CLEAN.
    Three classes: the label is the rank of the negation among the three
    special words (first CLEAN, second OFFENSIVE, last HATE).

    Every sentence contains the same special words exactly once, so the
    label is carried by word order alone and a bag-of-words model sits at
    chance level.
    """
    if n_classes not in (2, 3):
        raise ValueError("n_classes must be 2 or 3")
    n_special = n_classes
    if length < n_special:
        raise ValueError("sentences are too short for the marker words")
    rng = np.random.default_rng(seed)
    docs = []
    for k in range(n):
        words = list(rng.choice(FILLERS, size=length))
        slots = rng.choice(length, size=n_special, replace=False)
        words[slots[0]] = NEGATION
        for slot, marker in zip(slots[1:], MARKERS):
            words[slot] = marker
        rank = int(np.sum(slots[1:] < slots[0]))
        if n_classes == 2:
            label = ClassLabel.OFFENSIVE if rank == 0 else ClassLabel.CLEAN
        else:
            label = ClassLabel(rank)
        docs.append(LabeledDocument(f"{prefix}{k}", " ".join(words), label))
    return docs
