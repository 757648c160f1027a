"""Synthetic copy corpus with planted record alignments.

Each instance draws K in [2, 4] records from a fixed attribute inventory with
distinct value tokens. The reference realizes every record through an
attribute-specific phrase containing the value verbatim; phrases appear in
random order after an optional opener, joined by connectors and closed by a
period. Phrase tokens
carry their record's index as the gold label; opener, connector and period
tokens carry 0 (null).
"""

from __future__ import annotations

import numpy as np

from ..corpus import DataInstance, Record, linearize

PHRASES = {
    "name": [["<v>"], ["called", "<v>"]],
    "eattype": [["a", "<v>"]],
    "food": [["serving", "<v>", "food"], ["with", "<v>", "dishes"]],
    "area": [["in", "<v>", "area"]],
    "pricerange": [["with", "<v>", "prices"]],
    "rating": [["rated", "<v>"]],
    "near": [["near", "<v>"]],
}
# phrases are at most 4 tokens and fillers at most 2, so every text can be
# cut into K segments of length <= 6 with the filler absorbed
CONNECTORS = [["and"], [","], [], [",", "and"], ["which", "is"]]
OPENERS = [[], ["we", "like"], ["try"]]
VALUES_PER_ATTRIBUTE = 12


def value_tokens(attribute: str, k: int) -> tuple[str, ...]:
    stem = attribute[:3]
    if k % 3 == 2:
        return (f"{stem}{k}a", f"{stem}{k}b")
    return (f"{stem}{k}",)


def make_instance(rng: np.random.Generator, k_range=(2, 4)) -> DataInstance:
    attrs = list(PHRASES)
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    chosen = [attrs[i] for i in rng.choice(len(attrs), size=K, replace=False)]
    records = [Record(0)]
    for idx, attr in enumerate(chosen, start=1):
        records.append(Record(idx, (attr,), value_tokens(attr, int(rng.integers(VALUES_PER_ATTRIBUTE)))))
    _, records = linearize(records)
    opener = OPENERS[int(rng.integers(len(OPENERS)))]
    target: list[str] = list(opener)
    gold: list[int] = [0] * len(opener)
    for pos, j in enumerate(rng.permutation(np.arange(1, K + 1))):
        j = int(j)
        if pos > 0:
            conn = CONNECTORS[int(rng.integers(len(CONNECTORS)))]
            target += conn
            gold += [0] * len(conn)
        options = PHRASES[records[j].attribute[0]]
        phrase = options[int(rng.integers(len(options)))]
        for tok in phrase:
            words = list(records[j].value) if tok == "<v>" else [tok]
            target += words
            gold += [j] * len(words)
    target.append(".")
    gold.append(0)
    return DataInstance(records, target, gold)


def make_synthetic(n: int, seed: int = 0, k_range=(2, 4)) -> list[DataInstance]:
    rng = np.random.default_rng(seed)
    return [make_instance(rng, k_range) for _ in range(n)]
