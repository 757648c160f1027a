"""Word generation: decoder steps, record-masked attention and the copy-augmented output.

Two entry points share the same arithmetic:

* single-step functions (:func:`decoder_step`, :func:`masked_attention`,
  :func:`output_distribution`, :func:`segment_logprob`) used by decoding and
  by the brute-force oracle;
* :func:`score_targets`, which runs the decoder once over a padded batch of
  references and returns per-token and end-of-segment log-probabilities under
  every record at once (the input to the segment score cache).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .corpus import EOS_SEG_ID, EncodedInstance
from .encoder import BatchEncoding, SourceEncoding, lstm_cell
from .model import Batch, Model


@dataclass
class OpCounter:
    """Counts attention score evaluations (instrumentation for decoding cost)."""

    attention: int = 0
    transition: int = 0
    token_steps: list[tuple[int, int]] = field(default_factory=list)  # (record, evaluations)
    transition_steps: list[int] = field(default_factory=list)


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    t: int = 0


@dataclass
class OutputDistribution:
    log_probs: Tensor  # (V_ext,)
    p_gen: float
    vocab_probs: np.ndarray  # (V,)
    copy_probs: np.ndarray  # (n,) attention weights


def initial_state(encoding: SourceEncoding) -> DecoderState:
    return DecoderState(encoding.init_h, encoding.init_c, 0)


def decoder_step(state: DecoderState, token_id: int, model: Model) -> DecoderState:
    """Advance the decoder by one target token; the end-of-segment symbol is never fed."""
    if token_id == EOS_SEG_ID:
        raise ValueError("the end-of-segment symbol does not update the decoder state")
    x = ad.embedding(model["embedding"], [token_id])
    x = ad.dropout(x, model.config.dropout, model.rng, model.training)
    h, c = lstm_cell(x, ad.reshape(state.h, (1, -1)), ad.reshape(state.c, (1, -1)),
                     model["dec_Wx"], model["dec_Wh"], model["dec_b"])
    return DecoderState(h[0], c[0], state.t + 1)


def masked_attention(h: Tensor, d: Tensor, record_mask: np.ndarray, model: Model,
                     counter: OpCounter | None = None) -> tuple[Tensor, Tensor]:
    """Attend to the source positions of one record only.

    Scores are computed for the record's positions alone, so the cost per
    call is the record's span length. Returns the context vector and
    full-length attention weights (exactly zero off the record). The null
    record (empty mask) yields a zero context and all-zero weights.
    """
    n = h.shape[0]
    idx = np.flatnonzero(record_mask)
    if counter is not None:
        counter.attention += len(idx)
    if len(idx) == 0:
        return ad.Tensor(np.zeros(h.shape[-1])), ad.Tensor(np.zeros(n))
    span = h[idx]  # (N, 2H)
    query = ad.reshape(d, (1, -1)) @ model["att_W"]  # (1, 2H)
    scores = query @ ad.swapaxes(span, 0, 1)  # (1, N)
    weights = ad.softmax(scores)
    context = (weights @ span)[0]
    select = np.zeros((len(idx), n))
    select[np.arange(len(idx)), idx] = 1.0
    return context, (weights @ select)[0]


def output_distribution(d: Tensor, context: Tensor, weights: Tensor, src_ext: np.ndarray,
                        model: Model, vext: int | None = None, has_span: bool = True,
                        p_gen_override: float | None = None) -> OutputDistribution:
    """Pointer-generator mixture over the extended vocabulary.

    ``p(w) = p_gen * p_vocab(w) + (1 - p_gen) * sum_{i: x_i = w} weights_i``.
    Without a span (the null record) the copy branch is empty and ``p_gen`` is 1.
    """
    V = model.config.vocab_size
    vext = V if vext is None else vext
    vext = max(vext, int(src_ext.max()) + 1 if len(src_ext) else V)
    d2 = ad.reshape(d, (1, -1))
    a2 = ad.reshape(context, (1, -1))
    logits = d2 @ model["out_W1"] + a2 @ model["out_W2"] + model["out_b"]
    log_vocab = ad.log_softmax(logits)[0]
    vocab_probs = ad.exp(log_vocab)
    if p_gen_override is not None:
        p_gen = ad.Tensor(np.array(p_gen_override))
    elif not has_span:
        p_gen = ad.Tensor(np.array(1.0))
    else:
        hidden = ad.tanh(d2 @ model["pgen_Wd"] + a2 @ model["pgen_Wa"] + model["pgen_b"])
        p_gen = ad.sigmoid(hidden @ model["pgen_w"] + model["pgen_c"])[0, 0]
    onehot = np.zeros((len(src_ext), vext))
    onehot[np.arange(len(src_ext)), src_ext] = 1.0
    copy = ad.reshape(weights, (1, -1)) @ onehot  # (1, V_ext)
    pad = np.zeros((1, vext - V))
    gen = ad.concat([ad.reshape(vocab_probs, (1, -1)), pad], axis=-1)
    mixed = gen * p_gen + copy * (1.0 - p_gen)
    return OutputDistribution(
        log_probs=ad.log(mixed)[0],
        p_gen=float(p_gen.data),
        vocab_probs=vocab_probs.data.copy(),
        copy_probs=weights.data.copy(),
    )


def token_distribution(state: DecoderState, encoding: SourceEncoding, instance: EncodedInstance,
                       record: int, model: Model, counter: OpCounter | None = None,
                       vext: int | None = None) -> tuple[OutputDistribution, Tensor]:
    """Next-token distribution given the decoder state, attending to ``record`` only."""
    mask = encoding.record_masks[record]
    context, weights = masked_attention(encoding.h, state.h, mask, model, counter)
    vext = vext or model.config.vocab_size + len(instance.oov)
    dist = output_distribution(state.h, context, weights, instance.src_ext, model, vext,
                               has_span=bool(mask.any()))
    return dist, context


def segment_logprob(instance: EncodedInstance, encoding: SourceEncoding, start: int, end: int,
                    record: int, model: Model) -> Tensor:
    """Log-probability of ``y[start..end]`` (1-based, inclusive) followed by ``$`` under ``record``.

    Recomputed from scratch: the decoder is replayed over ``y[1..end]``.
    """
    L = model.config.max_segment_len
    if not 1 <= end - start + 1 <= L:
        raise ValueError(f"segment length {end - start + 1} outside [1, {L}]")
    if not 1 <= start <= end <= instance.m:
        raise ValueError("segment lies outside the target")
    state = initial_state(encoding)
    total = ad.Tensor(np.array(0.0))
    for t in range(1, end + 1):
        if t >= start:
            dist, _ = token_distribution(state, encoding, instance, record, model)
            total = total + dist.log_probs[instance.tgt_ext[t - 1]]
        state = decoder_step(state, int(instance.tgt[t - 1]), model)
    dist, _ = token_distribution(state, encoding, instance, record, model)
    return total + dist.log_probs[EOS_SEG_ID]


# ---------------------------------------------------------------- batched scoring


@dataclass
class TargetScores:
    """Teacher-forced decoder outputs for a batch.

    ``states[:, t]`` is the decoder state after ``y[1..t]`` (``t = 0`` is the
    initial state). ``token[b, j, t]`` is ``log p(y[t+1] | y[1..t], record j)``
    and ``end[b, j, t]`` is ``log p($ | y[1..t+1], record j)``.
    """

    states: Tensor  # (B, m+1, H)
    contexts: Tensor  # (B, J, m+1, 2H)
    weights: Tensor  # (B, J, m+1, n)
    token: Tensor  # (B, J, m)
    end: Tensor  # (B, J, m)


def decode_states(model: Model, batch: Batch, enc: BatchEncoding) -> Tensor:
    cfg = model.config
    emb = ad.embedding(model["embedding"], batch.tgt)
    emb = ad.dropout(emb, cfg.dropout, model.rng, model.training)
    h, c = enc.init_h, enc.init_c
    states = [h]
    for t in range(batch.tgt.shape[1]):
        h, c = lstm_cell(emb[:, t], h, c, model["dec_Wx"], model["dec_Wh"], model["dec_b"])
        states.append(h)
    return ad.stack(states, axis=1)


def score_targets(model: Model, batch: Batch, enc: BatchEncoding) -> TargetScores:
    cfg = model.config
    B, n = batch.src.shape
    m = batch.tgt.shape[1]
    J = batch.record_mask.shape[1]
    V = cfg.vocab_size
    D = decode_states(model, batch, enc)
    D_out = ad.dropout(D, cfg.dropout, model.rng, model.training)

    mask = np.where(batch.record_mask, 0.0, NEG_INF)[:, :, None, :]  # (B, J, 1, n)
    query = D_out @ model["att_W"]  # (B, m+1, 2H)
    scores = ad.reshape(query @ ad.swapaxes(enc.h, 1, 2), (B, 1, m + 1, n))
    weights = ad.softmax(scores, mask)  # (B, J, m+1, n)
    contexts = weights @ ad.reshape(enc.h, (B, 1, n, -1))  # (B, J, m+1, 2H)

    d4 = ad.reshape(D_out, (B, 1, m + 1, -1))
    logits = d4 @ model["out_W1"] + contexts @ model["out_W2"] + model["out_b"]
    log_vocab = ad.log_softmax(logits)  # (B, J, m+1, V)
    hidden = ad.tanh(d4 @ model["pgen_Wd"] + contexts @ model["pgen_Wa"] + model["pgen_b"])
    p_gen = ad.reshape(ad.sigmoid(hidden @ model["pgen_w"] + model["pgen_c"]), (B, J, m + 1))
    has_span = batch.record_mask.any(axis=-1).astype(np.float64)[:, :, None]
    p_gen = p_gen * has_span + (1.0 - has_span)

    ext = batch.tgt_ext
    in_vocab = ext < V
    ids = np.where(in_vocab, ext, 0)
    bi = np.arange(B)[:, None, None]
    ji = np.arange(J)[None, :, None]
    ti = np.arange(m)[None, None, :]
    vocab_tok = ad.exp(log_vocab[bi, ji, ti, ids[:, None, :]])
    vocab_tok = vocab_tok * in_vocab[:, None, :].astype(np.float64)
    match = ((batch.src_ext[:, None, :] == ext[:, :, None]) & batch.src_mask[:, None, :]).astype(np.float64)
    copy_tok = ad.sum(weights[:, :, :m] * match[:, None], axis=-1)  # (B, J, m)
    pg_tok = p_gen[:, :, :m]
    token = ad.log(pg_tok * vocab_tok + (1.0 - pg_tok) * copy_tok)
    end = ad.log(p_gen[:, :, 1:]) + log_vocab[:, :, 1:, EOS_SEG_ID]
    return TargetScores(states=D_out, contexts=contexts, weights=weights, token=token, end=end)


def stop_nll(model: Model, states: Tensor, tgt_len: np.ndarray) -> Tensor:
    """Per-instance negative log-likelihood of the end-of-text decision.

    At every position ``t`` of the reference the decoder state ``d_t`` predicts
    whether the text ends there; only ``t = m`` is an ending.
    """
    B, m1, _ = states.shape
    logit = ad.reshape(states[:, 1:] @ model["stop_w"] + model["stop_b"], (B, m1 - 1))
    t = np.arange(1, m1)[None, :]
    target = (t == tgt_len[:, None]).astype(np.float64)
    live = (t <= tgt_len[:, None]).astype(np.float64)
    p = ad.sigmoid(logit)
    ll = ad.log(p) * target + ad.log(1.0 - p) * (1.0 - target)
    return -ad.sum(ll * live, axis=1)


def stop_logprobs(model: Model, d: Tensor) -> tuple[float, float]:
    """``(log p(end of text), log p(continue))`` at decoder state ``d``."""
    z = float((ad.reshape(d, (1, -1)) @ model["stop_w"] + model["stop_b"]).data[0, 0])
    return -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)
