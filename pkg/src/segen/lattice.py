"""Segment score cache, the differentiable semi-Markov forward pass and the training loss.

Indexing conventions (0-based arrays, 1-based text positions):

* ``gen[b, a, l - 1, j]`` scores the segment ``y[a+1 .. a+l]`` plus ``$`` under record ``j``;
* ``trans[b, p, q, j]`` is the log-probability of choosing ``j`` after a
  segment that ended at position ``p`` with record ``q`` (``p = 0``: first
  segment, row ``q = 0``);
* ``alpha[b, i - 1, j]`` is the log joint score of ``y[1..i]`` with the last
  segment ending at ``i`` labelled ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import NEG_INF, Tensor
from .corpus import EncodedInstance
from .encoder import SourceEncoding, encode_batch
from .generator import score_targets, stop_nll
from .model import Batch, Model
from .transition import transition_table


@dataclass
class SegmentScoreCache:
    gen: Tensor  # (B, m, L, J)
    trans: Tensor  # (B, m+1, J, J)
    lengths: np.ndarray  # (B,)
    K: np.ndarray  # (B,)
    L: int

    @property
    def batch_size(self) -> int:
        return self.gen.shape[0]

    def instance(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """Unpadded ``(gen, trans)`` arrays of one instance, for the inference kernels."""
        m, J = int(self.lengths[b]), int(self.K[b]) + 1
        gen = np.ascontiguousarray(self.gen.data[b, :m, :, :J])
        # segments running past the end of this instance are impossible
        for a in range(m):
            gen[a, m - a:, :] = NEG_INF
        trans = np.ascontiguousarray(self.trans.data[b, : m + 1, :J, :J])
        return gen, trans


@dataclass
class ForwardLattice:
    alpha: np.ndarray  # (m, K+1)
    log_count: np.ndarray  # (m, K+1): log of the segment-count accumulator
    loglik: float
    expected_segments: float


def build_segment_gen(token: Tensor, end: Tensor, L: int) -> Tensor:
    """Assemble ``gen[b, a, l-1, j]`` from per-token and end-of-segment scores ``(B, J, m)``.

    Extending a segment by one token adds that token's score and swaps the ``$`` term.
    """
    B, J, m = token.shape
    tok = ad.transpose(token, (0, 2, 1))  # (B, m, J)
    eos = ad.transpose(end, (0, 2, 1))
    pad = np.full((B, L, J), NEG_INF)
    tok = ad.concat([tok, pad], axis=1)
    eos = ad.concat([eos, pad], axis=1)
    running = tok[:, 0:m]
    out = [running + eos[:, 0:m]]
    for l in range(2, L + 1):
        running = running + tok[:, l - 1:l - 1 + m]
        out.append(running + eos[:, l - 1:l - 1 + m])
    return ad.stack(out, axis=2)


def build_cache(model: Model, batch: Batch, enc=None) -> tuple[SegmentScoreCache, object]:
    """Run the encoder and ONE decoder pass, then cache every segment and transition score."""
    enc = enc or encode_batch(model, batch)
    scores = score_targets(model, batch, enc)
    L = model.config.max_segment_len
    gen = build_segment_gen(scores.token, scores.end, L)
    trans = transition_table(model, batch, scores, enc.record_reprs)
    cache = SegmentScoreCache(gen=gen, trans=trans, lengths=batch.tgt_len.copy(), K=batch.K.copy(), L=L)
    return cache, scores


def precompute_segment_scores(instance: EncodedInstance, encoding: SourceEncoding | None, model: Model,
                              L: int | None = None) -> SegmentScoreCache:
    """Cache for a single instance (``encoding`` is recomputed inside the batch pass)."""
    if L is not None and L != model.config.max_segment_len:
        raise ValueError("L must match the model's max_segment_len")
    cache, _ = build_cache(model, Batch.from_encoded([instance]))
    return cache


def _forward(cache: SegmentScoreCache, with_counts: bool = True):
    gen, trans = cache.gen, cache.trans
    B, m, L, J = gen.shape
    msg = [trans[:, 0, 0, :]]
    msg_count = [msg[0]]
    alphas, counts = [], []
    for i in range(1, m + 1):
        Lc = min(L, i)
        starts = np.array([i - l for l in range(1, Lc + 1)])
        g = gen[:, starts, np.arange(Lc), :]  # (B, Lc, J)
        incoming = ad.stack([msg[s] for s in starts], axis=1)
        alpha = ad.log_sum_exp(incoming + g, axis=1)
        alphas.append(alpha)
        if with_counts:
            incoming_c = ad.stack([msg_count[s] for s in starts], axis=1)
            count = ad.log_sum_exp(incoming_c + g, axis=1)
            counts.append(count)
        if i < m:
            step = trans[:, i]  # (B, q, j)
            msg.append(ad.log_sum_exp(ad.reshape(alpha, (B, J, 1)) + step, axis=1))
            if with_counts:
                weight = ad.log_add(count, alpha)
                msg_count.append(ad.log_sum_exp(ad.reshape(weight, (B, J, 1)) + step, axis=1))
    rows = np.arange(B)
    last = cache.lengths - 1
    loglik = ad.log_sum_exp(ad.stack(alphas, axis=1)[rows, last], axis=-1)
    if not with_counts:
        return loglik, None
    log_count = ad.log_sum_exp(ad.stack(counts, axis=1)[rows, last], axis=-1)
    return loglik, log_count


def forward_loglik(cache: SegmentScoreCache) -> Tensor:
    """``log p(y | X)`` per instance, marginalised over segmentations and labelings."""
    if cache.gen.shape[1] == 0 or (cache.lengths < 1).any():
        raise ValueError("forward_loglik needs m >= 1")
    loglik, _ = _forward(cache, with_counts=False)
    return loglik


def expected_segments(cache: SegmentScoreCache) -> Tensor:
    """Posterior expected number of segments per instance (differentiable)."""
    if cache.gen.shape[1] == 0 or (cache.lengths < 1).any():
        raise ValueError("expected_segments needs m >= 1")
    loglik, log_count = _forward(cache)
    if not np.all(np.isfinite(loglik.data)):
        raise ValueError("the text has zero probability under every segmentation")
    return ad.exp(log_count - loglik)


def granularity_penalty(expected: Tensor, eta, gamma: float) -> Tensor:
    """``max(|E[#segments] - eta|, gamma)``; ``gamma = inf`` switches the term off."""
    if np.isinf(gamma):
        return ad.Tensor(np.zeros(expected.shape))
    return ad.maximum(ad.absolute(expected - np.asarray(eta, dtype=np.float64)), gamma)


@dataclass
class LossBreakdown:
    loss: Tensor  # scalar: mean over the batch of the objective
    nll: np.ndarray  # (B,)
    expected_segments: np.ndarray  # (B,)
    penalty: np.ndarray  # (B,)
    stop_nll: np.ndarray  # (B,)


def batch_loss(model: Model, batch: Batch, eta=None, gamma: float = 1.0,
               stop_weight: float = 1.0) -> LossBreakdown:
    """Mean over the batch of ``-log p(y|X) + max(|E tau - eta|, gamma)`` (+ end-of-text term).

    ``eta`` defaults to each instance's record count ``K``.
    """
    eta = batch.K.astype(np.float64) if eta is None else np.broadcast_to(np.asarray(eta, dtype=np.float64), (batch.size,))
    if (eta < 1).any() or gamma < 0:
        raise ValueError("need eta >= 1 and gamma >= 0")
    enc = encode_batch(model, batch)
    cache, scores = build_cache(model, batch, enc)
    loglik, log_count = _forward(cache)
    expected = ad.exp(log_count - loglik)
    penalty = granularity_penalty(expected, eta, gamma)
    per_instance = penalty - loglik
    stop = None
    if stop_weight:
        stop = stop_nll(model, scores.states, batch.tgt_len)
        per_instance = per_instance + stop * stop_weight
    loss = ad.sum(per_instance) * (1.0 / batch.size)
    return LossBreakdown(
        loss=loss,
        nll=-loglik.data.copy(),
        expected_segments=expected.data.copy(),
        penalty=penalty.data.copy(),
        stop_nll=np.zeros(batch.size) if stop is None else stop.data.copy(),
    )


def training_loss(instance: EncodedInstance, model: Model, eta: float | None = None, gamma: float = 1.0) -> Tensor:
    """``-log p(y|X) + max(|E tau - eta|, gamma)`` for one instance (``eta`` defaults to ``K``)."""
    out = batch_loss(model, Batch.from_encoded([instance]), eta=eta, gamma=gamma, stop_weight=0.0)
    return out.loss


def lattice_tables(cache: SegmentScoreCache, b: int = 0) -> ForwardLattice:
    """Non-differentiable forward tables of one instance via the compiled kernel."""
    gen, trans = cache.instance(b)
    alpha, log_count = kernels.semimarkov_forward(gen, trans)
    loglik = float(np.logaddexp.reduce(alpha[-1]))
    total = float(np.logaddexp.reduce(log_count[-1]))
    return ForwardLattice(alpha=alpha, log_count=log_count, loglik=loglik,
                          expected_segments=float(np.exp(total - loglik)))


def dump_lattice(table: ForwardLattice, fh):
    """Write alpha and the count accumulator as tab-separated rows."""
    m, J = table.alpha.shape
    fh.write("table\ti\t" + "\t".join(f"r{j}" for j in range(J)) + "\n")
    for name, data in (("alpha", table.alpha), ("log_count", table.log_count)):
        for i in range(m):
            fh.write(f"{name}\t{i + 1}\t" + "\t".join(f"{v:.10g}" for v in data[i]) + "\n")
    fh.write(f"loglik\t{table.loglik:.12g}\nexpected_segments\t{table.expected_segments:.12g}\n")
