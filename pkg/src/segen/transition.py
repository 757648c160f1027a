"""Record selection: ``p(c(s_o) = r_i | c(s_{o-1}), history) ∝ exp(f(r_i)^T [M^T A + N^T d])``.

Self-transitions are removed by giving the previous record a score of
``-inf``. The very first segment is scored with a zero context, the decoder's
initial state and no previous record, so nothing is masked there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Tensor
from .generator import OpCounter, TargetScores
from .model import Batch, Model


class NoTransitionError(ValueError):
    pass


@dataclass
class TransitionContext:
    context: Tensor  # attention context at the last token of the previous segment (2H,)
    state: Tensor  # decoder state after the previous segment (H,)
    prev_record: int = 0
    first: bool = False


def first_context(init_state: Tensor, width: int) -> TransitionContext:
    return TransitionContext(ad.Tensor(np.zeros(width)), init_state, 0, first=True)


def transition_mask(num_records: int, prev_record: int, first: bool, allow_null_self: bool,
                    use_null: bool = True) -> np.ndarray:
    """Additive mask (0 or ``-inf``) over the ``K+1`` candidate records."""
    mask = np.zeros(num_records)
    if not use_null:
        mask[0] = NEG_INF
    if not first and (prev_record != 0 or not allow_null_self):
        mask[prev_record] = NEG_INF
    return mask


def transition_logits(ctx: TransitionContext, record_reprs: Tensor, model: Model,
                      counter: OpCounter | None = None) -> Tensor:
    """One masked score per record ``0..K``."""
    cfg = model.config
    u = ad.reshape(ctx.context, (1, -1)) @ model["trans_M"] + ad.reshape(ctx.state, (1, -1)) @ model["trans_N"]
    scores = ad.reshape(record_reprs @ ad.swapaxes(u, 0, 1), (-1,))
    K1 = record_reprs.shape[0]
    if counter is not None:
        counter.transition += K1
        counter.transition_steps.append(K1)
    mask = transition_mask(K1, ctx.prev_record, ctx.first, cfg.allow_null_self_transition, cfg.use_null_record)
    return scores + mask


def transition_distribution(ctx: TransitionContext, record_reprs: Tensor, model: Model,
                            counter: OpCounter | None = None) -> Tensor:
    logits = transition_logits(ctx, record_reprs, model, counter)
    if not np.isfinite(logits.data).any():
        raise NoTransitionError(
            f"no record can follow record {ctx.prev_record}: every choice is masked")
    return ad.log_softmax(logits)


def transition_table(model: Model, batch: Batch, scores: TargetScores, record_reprs: Tensor) -> Tensor:
    """Log transition probabilities ``[b, p, q, j]`` for every boundary ``p = 0..m``.

    ``p = 0`` is the first segment (only row ``q = 0`` is meaningful there);
    for ``p >= 1`` the context is the one used when predicting ``y[p]`` under
    record ``q`` and the state is ``d_p``.
    """
    cfg = model.config
    B, J = batch.record_valid.shape
    m = batch.tgt.shape[1]
    contexts = scores.contexts  # (B, J, m+1, 2H)
    zero = np.zeros((B, J, 1, contexts.shape[-1]))
    prev_ctx = ad.concat([zero, contexts[:, :, :m]], axis=2)  # (B, J, m+1, 2H)
    u = prev_ctx @ model["trans_M"] + ad.reshape(scores.states @ model["trans_N"], (B, 1, m + 1, -1))
    logits = u @ ad.reshape(ad.swapaxes(record_reprs, 1, 2), (B, 1, record_reprs.shape[2], J))

    mask = np.zeros((B, J, m + 1, J))
    mask[~np.broadcast_to(batch.record_valid[:, None, None, :], mask.shape)] = NEG_INF
    if not cfg.use_null_record:
        mask[..., 0] = NEG_INF
    eye = np.eye(J, dtype=bool)
    if cfg.allow_null_self_transition:
        eye[0, 0] = False
    self_mask = np.broadcast_to(eye[None, :, None, :], mask.shape).copy()
    self_mask[:, :, 0, :] = False
    mask[self_mask] = NEG_INF
    logp = ad.log_softmax(logits, mask, allow_empty=True)  # (B, q, p, j)
    return ad.transpose(logp, (0, 2, 1, 3))
