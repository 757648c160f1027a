"""Bidirectional LSTM source encoder and max-pooled record representations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import EncodedInstance, Record, Vocabulary
from .model import Batch, Model


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, Wx, Wh, b) -> tuple[Tensor, Tensor]:
    gates = x @ Wx + h @ Wh + b
    H = h.shape[-1]
    i = ad.sigmoid(gates[..., 0:H])
    f = ad.sigmoid(gates[..., H:2 * H])
    g = ad.tanh(gates[..., 2 * H:3 * H])
    o = ad.sigmoid(gates[..., 3 * H:4 * H])
    c = f * c + i * g
    return o * ad.tanh(c), c


@dataclass
class BatchEncoding:
    h: Tensor  # (B, n, 2H)
    record_reprs: Tensor  # (B, J, e)
    init_h: Tensor  # (B, H)
    init_c: Tensor  # (B, H)


@dataclass
class SourceEncoding:
    """Encoding of a single instance."""

    h: Tensor  # (n, 2H)
    record_reprs: Tensor  # (K+1, e)
    record_masks: np.ndarray  # (K+1, n) bool
    init_h: Tensor  # (H,)
    init_c: Tensor  # (H,)


def _run_direction(model: Model, emb: Tensor, mask: np.ndarray, prefix: str, reverse: bool):
    B, n, _ = emb.shape
    H = model.config.hidden_size
    h = ad.Tensor(np.zeros((B, H)))
    c = ad.Tensor(np.zeros((B, H)))
    outputs: list[Tensor | None] = [None] * n
    steps = range(n - 1, -1, -1) if reverse else range(n)
    Wx, Wh, b = model[f"{prefix}_Wx"], model[f"{prefix}_Wh"], model[f"{prefix}_b"]
    for t in steps:
        h_new, c_new = lstm_cell(emb[:, t], h, c, Wx, Wh, b)
        keep = mask[:, t, None].astype(np.float64)
        if keep.all():
            h, c = h_new, c_new
        else:
            h = h_new * keep + h * (1.0 - keep)
            c = c_new * keep + c * (1.0 - keep)
        outputs[t] = h
    return ad.stack(outputs, axis=1), h


def encode_batch(model: Model, batch: Batch) -> BatchEncoding:
    cfg = model.config
    raw = ad.embedding(model["embedding"], batch.src)
    emb = ad.dropout(raw, cfg.dropout, model.rng, model.training)
    fwd, fwd_last = _run_direction(model, emb, batch.src_mask, "enc_fwd", reverse=False)
    bwd, bwd_last = _run_direction(model, emb, batch.src_mask, "enc_bwd", reverse=True)
    h = ad.dropout(ad.concat([fwd, bwd], axis=-1), cfg.dropout, model.rng, model.training)
    summary = ad.concat([fwd_last, bwd_last], axis=-1)
    init_h = ad.tanh(summary @ model["dec_init_W"] + model["dec_init_b"])
    init_c = ad.Tensor(np.zeros(init_h.shape))
    reprs = ad.masked_max(raw, batch.record_mask)
    return BatchEncoding(h=h, record_reprs=reprs, init_h=init_h, init_c=init_c)


def encode_source(instance: EncodedInstance, model: Model) -> SourceEncoding:
    """Encode one instance: one ``2H``-wide vector per source token."""
    if instance.n == 0:
        raise ValueError("empty linearized source")
    enc = encode_batch(model, Batch.from_encoded([instance]))
    return SourceEncoding(
        h=enc.h[0],
        record_reprs=enc.record_reprs[0],
        record_masks=instance.record_mask.copy(),
        init_h=enc.init_h[0],
        init_c=enc.init_c[0],
    )


def record_repr(record: Record, embeddings, vocab: Vocabulary | None = None) -> Tensor:
    """Elementwise max over the embeddings of a record's attribute and value tokens.

    ``embeddings`` is either an embedding table (with ``vocab`` to map tokens)
    or an ``(n_tokens, e)`` array of the record's token embeddings. The null
    record maps to the zero vector.
    """
    table = ad.as_tensor(embeddings)
    if record.is_null:
        return ad.Tensor(np.zeros(table.shape[-1]))
    if vocab is not None:
        rows = ad.embedding(table, [vocab.id(t) for t in record.tokens])
    else:
        rows = table
    mask = np.ones((1, rows.shape[0]), dtype=bool)
    return ad.masked_max(rows, mask)[0]
