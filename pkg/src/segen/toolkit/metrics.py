"""Corpus BLEU-4, distinct n-gram counts and token alignment accuracy."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Sequence


def _split(text) -> list[str]:
    return text.split() if isinstance(text, str) else list(text)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: Sequence, references: Sequence, smooth: bool = False) -> float:
    """Corpus-level single-reference BLEU with uniform 1..4-gram weights.

    Items may be strings (whitespace-split) or token lists. With ``smooth``,
    add-one smoothing is applied to the 2..4-gram precisions.
    """
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("empty corpus")
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = _split(hyp), _split(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(4):
        m, t = matches[n], totals[n]
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / 4
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def distinct_ngrams(hypotheses: Sequence, n: int) -> int:
    """Number of unique ``n``-grams across the whole corpus."""
    if n < 1:
        raise ValueError("n must be >= 1")
    seen = set()
    for hyp in hypotheses:
        seen.update(_ngrams(_split(hyp), n))
    return len(seen)


def alignment_accuracy(predicted, gold: Sequence[int], exclude_null: bool = False) -> float:
    """Fraction of tokens whose predicted record equals the gold record.

    ``predicted`` is a :class:`~segen.oracle.LabeledSegmentation` or a flat
    per-token label list. With ``exclude_null`` tokens whose gold label is 0
    are left out of the denominator.
    """
    labels = predicted.token_labels() if hasattr(predicted, "token_labels") else list(predicted)
    if len(labels) != len(gold):
        raise ValueError(f"predicted labels cover {len(labels)} tokens, gold has {len(gold)}")
    pairs = [(p, g) for p, g in zip(labels, gold) if not (exclude_null and g == 0)]
    if not pairs:
        raise ValueError("no tokens to score")
    return sum(p == g for p, g in pairs) / len(pairs)


def corpus_alignment_accuracy(predicted: Sequence, gold: Sequence[Sequence[int]], exclude_null: bool = False) -> float:
    """Token-weighted accuracy pooled over instances."""
    hit = tot = 0
    for p, g in zip(predicted, gold, strict=True):
        labels = p.token_labels() if hasattr(p, "token_labels") else list(p)
        if len(labels) != len(g):
            raise ValueError(f"predicted labels cover {len(labels)} tokens, gold has {len(g)}")
        for a, b in zip(labels, g):
            if exclude_null and b == 0:
                continue
            tot += 1
            hit += a == b
    if tot == 0:
        raise ValueError("no tokens to score")
    return hit / tot
