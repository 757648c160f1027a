"""Segment-by-segment decoding with structural constraints, forced structures and Viterbi alignment.

Decoding alternates two kinds of steps:

* at a segment boundary, choose the next record (or end the text);
* inside a segment, emit a token or the end-of-segment symbol ``$``.

Modes: ``base`` (segments are never empty), ``R`` (additionally no non-null
record is realized twice) and ``RM`` (additionally the text cannot end until
every non-null record has been realized). Expansions that break the active
constraints are pruned before they are scored into the beam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import kernels
from .autodiff import Tensor, no_grad
from .corpus import EOS_SEG_ID, EOT_ID, PAD_ID, UNK_ID, EncodedInstance, Vocabulary
from .encoder import SourceEncoding, encode_source
from .generator import (DecoderState, OpCounter, decoder_step, initial_state, stop_logprobs,
                        token_distribution)
from .lattice import build_cache
from .model import Batch, Model
from .oracle import LabeledSegmentation
from .transition import TransitionContext, first_context, transition_distribution

NEG_INF = -math.inf


class Mode(str, Enum):
    BASE = "base"
    R = "R"
    RM = "RM"


class IncompleteCoverageError(RuntimeError):
    """No hypothesis realized every record within ``max_len`` tokens."""

    def __init__(self, message: str, partial: Hypothesis | None):
        super().__init__(message)
        self.partial = partial


@dataclass
class Hypothesis:
    tokens: list[int]  # extended ids
    segments: list[tuple[int, int, int]]  # (start, end, record), end exclusive
    state: DecoderState
    used: frozenset = frozenset()
    score: float = 0.0
    record: int | None = None  # record of the open segment
    seg_start: int = 0
    last_context: Tensor | None = None
    finished: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[int]:
        return [j for _, _, j in self.segments]

    @property
    def prev_record(self) -> int | None:
        return self.segments[-1][2] if self.segments else None

    def segmentation(self) -> LabeledSegmentation:
        return LabeledSegmentation.from_segments(self.segments)

    def words(self, vocab: Vocabulary, oov: list[str]) -> list[str]:
        V = len(vocab)
        return [vocab.token(t) if t < V else oov[t - V] for t in self.tokens]

    def text(self, vocab: Vocabulary, oov: list[str]) -> str:
        return " ".join(self.words(vocab, oov))

    def trace(self, vocab: Vocabulary, instance: EncodedInstance) -> dict:
        words = self.words(vocab, instance.oov)
        records = instance.instance.records
        return {
            "text": " ".join(words),
            "segments": [
                {"tokens": words[s:e], "record_attr": records[j].label(), "record_index": j}
                for s, e, j in self.segments
            ],
            **({"metadata": self.metadata} if self.metadata else {}),
        }


class _Search:
    def __init__(self, instance: EncodedInstance, model: Model, max_len: int, counter: OpCounter | None):
        self.instance = instance
        self.model = model
        self.max_len = max_len
        self.counter = counter
        self.encoding: SourceEncoding = encode_source(instance, model)
        self.K = instance.K
        self.vext = model.config.vocab_size + len(instance.oov)
        blocked = np.zeros(self.vext, dtype=bool)
        blocked[[PAD_ID, UNK_ID, EOT_ID]] = True
        self.blocked = blocked

    def start(self, metadata: dict | None = None) -> Hypothesis:
        return Hypothesis(tokens=[], segments=[], state=initial_state(self.encoding),
                          metadata=dict(metadata or {}))

    def transition_logprobs(self, hyp: Hypothesis) -> np.ndarray:
        enc = self.encoding
        if not hyp.segments:
            ctx = first_context(enc.init_h, enc.h.shape[-1])
        else:
            ctx = TransitionContext(hyp.last_context, hyp.state.h, hyp.prev_record)
        return transition_distribution(ctx, enc.record_reprs, self.model, self.counter).data

    def open_segment(self, hyp: Hypothesis, record: int, logp: float) -> Hypothesis:
        return replace(hyp, record=record, seg_start=len(hyp.tokens), score=hyp.score + logp,
                       metadata=dict(hyp.metadata))

    def finish(self, hyp: Hypothesis, logp: float) -> Hypothesis:
        return replace(hyp, finished=True, score=hyp.score + logp)

    def emissions(self, hyp: Hypothesis, beam: int) -> list[tuple[float, int, Hypothesis]]:
        """Token / ``$`` expansions of a hypothesis inside a segment."""
        L = self.model.config.max_segment_len
        before = self.counter.attention if self.counter is not None else 0
        dist, context = token_distribution(hyp.state, self.encoding, self.instance, hyp.record, self.model,
                                           self.counter, self.vext)
        if self.counter is not None:
            self.counter.token_steps.append((hyp.record, self.counter.attention - before))
        logp = dist.log_probs.data.copy()
        seg_len = len(hyp.tokens) - hyp.seg_start
        allowed = ~self.blocked & np.isfinite(logp)
        if seg_len == 0:
            allowed[EOS_SEG_ID] = False
        if seg_len >= L or len(hyp.tokens) >= self.max_len:
            allowed[:] = False
            allowed[EOS_SEG_ID] = seg_len > 0
        ids = np.flatnonzero(allowed)
        if len(ids) == 0:
            return []
        order = ids[np.lexsort((ids, -logp[ids]))][:beam]
        out = []
        for w in order:
            w = int(w)
            score = hyp.score + float(logp[w])
            if w == EOS_SEG_ID:
                seg = (hyp.seg_start, len(hyp.tokens), hyp.record)
                used = hyp.used | {hyp.record} if hyp.record != 0 else hyp.used
                new = replace(hyp, segments=hyp.segments + [seg], used=used, record=None, score=score)
            else:
                feed = w if w < self.model.config.vocab_size else UNK_ID
                state = decoder_step(hyp.state, feed, self.model)
                new = replace(hyp, tokens=hyp.tokens + [w], state=state, score=score, last_context=context)
            out.append((score, w, new))
        return out


def _coverage_met(hyp: Hypothesis, K: int) -> bool:
    return len(hyp.used) == K


def _best(hyps):
    return min(hyps, key=lambda h: (-h.score, h.labels, h.tokens)) if hyps else None


def decode(instance: EncodedInstance, model: Model, mode: Mode | str = Mode.BASE, beam: int = 1,
           max_len: int = 80, counter: OpCounter | None = None) -> Hypothesis:
    """Constrained greedy (``beam=1``) or beam search; returns the best finished hypothesis."""
    mode = Mode(mode)
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    with no_grad():
        search = _Search(instance, model, max_len, counter)
        K = search.K

        def boundary(hyp: Hypothesis):
            out = []
            at_limit = len(hyp.tokens) >= max_len
            if not at_limit:
                logp = search.transition_logprobs(hyp)
                stop, go = (0.0, 0.0) if not hyp.segments else stop_logprobs(model, hyp.state.h)
                for j in range(K + 1):
                    if not np.isfinite(logp[j]):
                        continue
                    if mode is not Mode.BASE and j != 0 and j in hyp.used:
                        continue
                    score = hyp.score + go + float(logp[j])
                    out.append((score, (0, j), search.open_segment(hyp, j, go + float(logp[j]))))
            if hyp.segments and (mode is not Mode.RM or _coverage_met(hyp, K)):
                stop = stop_logprobs(model, hyp.state.h)[0] if not at_limit else 0.0
                out.append((hyp.score + stop, (0, K + 1), search.finish(hyp, stop)))
            return out

        return _run(search, boundary, beam, K)


def _run(search: _Search, boundary, beam: int, K: int, metadata: dict | None = None) -> Hypothesis:
    alive = [search.start(metadata)]
    finished: list[Hypothesis] = []
    partial: list[Hypothesis] = []
    while alive:
        cands = []
        for hyp in alive:
            if hyp.record is None:
                expansions = boundary(hyp)
            else:
                expansions = [(s, (1, w), h) for s, w, h in search.emissions(hyp, beam)]
            if not expansions:
                partial.append(hyp)
            cands.extend(expansions)
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, _, hyp in cands:
            if hyp.finished:
                finished.append(hyp)
            elif len(alive) < beam:
                alive.append(hyp)
        best_done = _best(finished)
        if best_done is not None and (not alive or best_done.score >= max(h.score for h in alive)):
            break
    best_done = _best(finished)
    if best_done is None:
        raise IncompleteCoverageError(
            f"no hypothesis realized all {K} records within {search.max_len} tokens", _best(partial))
    return best_done


def forced_structure_decode(instance: EncodedInstance, model: Model, record_order: list[int],
                            allow_null: bool = False, beam: int = 1, max_len: int = 80,
                            counter: OpCounter | None = None) -> Hypothesis:
    """Decode with the record sequence fixed to ``record_order``; only tokens are searched.

    With ``allow_null`` a null segment may be inserted before any forced record.
    Repeated records are permitted and flagged in ``metadata``.
    """
    if not record_order:
        raise ValueError("record_order must be nonempty")
    K = instance.K
    bad = [j for j in record_order if not 0 <= j <= K]
    if bad:
        raise ValueError(f"invalid record index {bad[0]}; expected 0..{K}")
    order = list(record_order)
    non_null = [j for j in order if j != 0]
    meta = {"forced_order": order, "repeated_records": len(non_null) != len(set(non_null))}
    with no_grad():
        search = _Search(instance, model, max_len, counter)

        def boundary(hyp: Hypothesis):
            done = hyp.metadata.get("placed", 0)
            if done == len(order):
                return [(hyp.score, (0, K + 1), search.finish(hyp, 0.0))]
            if len(hyp.tokens) >= max_len:
                return []
            logp = search.transition_logprobs(hyp)
            out = []
            target = order[done]
            lp = float(logp[target]) if np.isfinite(logp[target]) else 0.0
            nxt = search.open_segment(hyp, target, lp)
            nxt.metadata["placed"] = done + 1
            out.append((nxt.score, (0, target), nxt))
            if allow_null and target != 0 and hyp.prev_record not in (None, 0) and np.isfinite(logp[0]):
                null = search.open_segment(hyp, 0, float(logp[0]))
                out.append((null.score, (0, 0), null))
            return out

        hyp = _run(search, boundary, beam, K, dict(meta, placed=0))
    hyp.metadata.pop("placed", None)
    return hyp


def viterbi_align(instance: EncodedInstance, model: Model, L: int | None = None) -> LabeledSegmentation:
    """Most probable labeled segmentation of the reference text (max-product forward pass)."""
    return viterbi_align_batch([instance], model, L)[0]


def viterbi_align_batch(instances: list[EncodedInstance], model: Model, L: int | None = None
                        ) -> list[LabeledSegmentation]:
    if L is not None and L != model.config.max_segment_len:
        raise ValueError("L must match the model's max_segment_len")
    with no_grad():
        cache, _ = build_cache(model, Batch.from_encoded(instances))
    out = []
    for b in range(len(instances)):
        gen, trans = cache.instance(b)
        score, segments = kernels.semimarkov_viterbi(gen, trans)
        seg = LabeledSegmentation.from_segments(segments)
        out.append(replace(seg, score=score))
    return out


def segmentation_score(instance_cache, b: int, seg: LabeledSegmentation) -> float:
    """Sum of cached transition and segment scores along ``seg``, in DP order."""
    gen, trans = instance_cache.instance(b)
    total = None
    prev = None
    for start, end, j in seg.segments():
        t = trans[0, 0, j] if prev is None else trans[start, prev, j]
        total = t if total is None else total + t
        total = total + gen[start, end - start - 1, j]
        prev = j
    return float(total)


def format_alignment(words: list[str], seg: LabeledSegmentation, records) -> str:
    """Render ``[tokens]_Record`` groups."""
    return "".join(f"[{' '.join(words[s:e])}]_{records[j].label()}" for s, e, j in seg.segments())
