"""Brute-force enumeration over segmentations and record labelings.

The reference for every lattice quantity. Scores come from the same
:mod:`segen.generator` and :mod:`segen.transition` calls as the model, but
each segment is rescored from scratch by replaying the decoder; no segment
score cache and no dynamic programming is involved. Individual scorer calls
are memoised per ``(start, end, record)`` and per ``(boundary, record)`` so
the enumeration stays affordable; every combination is still summed
explicitly.
"""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .autodiff import no_grad
from .corpus import EncodedInstance
from .encoder import encode_source
from .generator import decoder_step, initial_state, masked_attention, segment_logprob
from .logspace import log_sum_exp
from .model import Model
from .transition import TransitionContext, first_context, transition_distribution

MAX_COMBINATIONS = 10**6


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LabeledSegmentation:
    ends: tuple[int, ...]  # 1-based end position of each segment; the last is m
    labels: tuple[int, ...]
    score: float = field(default=math.nan, compare=False)

    @property
    def num_segments(self) -> int:
        return len(self.ends)

    def segments(self) -> list[tuple[int, int, int]]:
        """``(start, end, record)`` with 0-based inclusive start and exclusive end."""
        out, start = [], 0
        for end, label in zip(self.ends, self.labels):
            out.append((start, end, label))
            start = end
        return out

    def token_labels(self) -> list[int]:
        return [label for start, end, label in self.segments() for _ in range(start, end)]

    @classmethod
    def from_segments(cls, segments) -> LabeledSegmentation:
        return cls(tuple(e for _, e, _ in segments), tuple(j for _, _, j in segments))


def _allowed(prev: int | None, label: int, self_transition_allowed: bool, allow_null_self: bool) -> bool:
    if prev is None or prev != label:
        return True
    if label == 0:
        return allow_null_self or self_transition_allowed
    return self_transition_allowed


def count_labeled_segmentations(m: int, K: int, L: int, self_transition_allowed: bool = False,
                                allow_null_self: bool = False) -> int:
    @lru_cache(maxsize=None)
    def ways(pos: int, prev: int | None) -> int:
        if pos == m:
            return 1
        total = 0
        for l in range(1, min(L, m - pos) + 1):
            for label in range(K + 1):
                if _allowed(prev, label, self_transition_allowed, allow_null_self):
                    total += ways(pos + l, label)
        return total

    return ways(0, None)


def enumerate_segmentations(m: int, K: int, L: int, self_transition_allowed: bool = False,
                            allow_null_self: bool = False) -> Iterator[LabeledSegmentation]:
    """Every labeled segmentation of ``m`` tokens with labels ``0..K`` and segment length ``<= L``."""
    if m < 1 or L < 1 or K < 0:
        raise ValueError("need m >= 1, L >= 1, K >= 0")
    total = count_labeled_segmentations(m, K, L, self_transition_allowed, allow_null_self)
    if total > MAX_COMBINATIONS:
        raise EnumerationTooLarge(
            f"{total} labeled segmentations exceed the limit of {MAX_COMBINATIONS}; "
            "shrink the instance (m, K or L)")

    def walk(pos, prev, ends, labels):
        if pos == m:
            yield LabeledSegmentation(tuple(ends), tuple(labels))
            return
        for l in range(1, min(L, m - pos) + 1):
            for label in range(K + 1):
                if _allowed(prev, label, self_transition_allowed, allow_null_self):
                    yield from walk(pos + l, label, ends + [pos + l], labels + [label])

    yield from walk(0, None, [], [])


class _Scorer:
    def __init__(self, instance: EncodedInstance, model: Model):
        self.instance = instance
        self.model = model
        self.encoding = encode_source(instance, model)
        states = [initial_state(self.encoding)]
        for t in range(instance.m):
            states.append(decoder_step(states[-1], int(instance.tgt[t]), model))
        self.states = states
        self._gen = {}
        self._trans = {}

    def gen(self, start: int, end: int, record: int) -> float:
        key = (start, end, record)
        if key not in self._gen:
            self._gen[key] = float(segment_logprob(self.instance, self.encoding, start + 1, end, record,
                                                   self.model).data)
        return self._gen[key]

    def trans(self, boundary: int, prev: int | None, record: int) -> float:
        key = (boundary, prev)
        if key not in self._trans:
            enc = self.encoding
            if prev is None:
                ctx = first_context(enc.init_h, enc.h.shape[-1])
            else:
                context, _ = masked_attention(enc.h, self.states[boundary - 1].h, enc.record_masks[prev],
                                              self.model)
                ctx = TransitionContext(context, self.states[boundary].h, prev)
            self._trans[key] = transition_distribution(ctx, enc.record_reprs, self.model).data.copy()
        return float(self._trans[key][record])

    def score(self, seg: LabeledSegmentation) -> float:
        total = 0.0
        prev = None
        for start, end, label in seg.segments():
            total = total + self.trans(start, prev, label)
            total = total + self.gen(start, end, label)
            prev = label
        return total


def scored_segmentations(instance: EncodedInstance, model: Model, L: int | None = None):
    """``[(labeled segmentation, log score)]`` over the full enumeration."""
    cfg = model.config
    L = cfg.max_segment_len if L is None else L
    with no_grad():
        scorer = _Scorer(instance, model)
        return [(seg, scorer.score(seg)) for seg in enumerate_segmentations(
            instance.m, instance.K, L, False, cfg.allow_null_self_transition)]


def brute_loglik(instance: EncodedInstance, model: Model, L: int | None = None) -> float:
    return log_sum_exp([s for _, s in scored_segmentations(instance, model, L)])


def brute_expected_segments(instance: EncodedInstance, model: Model, L: int | None = None) -> float:
    scored = scored_segmentations(instance, model, L)
    z = log_sum_exp([s for _, s in scored])
    if z == -math.inf:
        raise ValueError("the text has zero probability under every segmentation")
    return float(sum(math.exp(s - z) * seg.num_segments for seg, s in scored))


def brute_argmax(instance: EncodedInstance, model: Model, L: int | None = None) -> tuple[LabeledSegmentation, float]:
    scored = scored_segmentations(instance, model, L)
    scores = np.array([s for _, s in scored])
    best = int(np.argmax(scores))
    return scored[best][0], float(scores[best])
