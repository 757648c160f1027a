"""Underflow-safe arithmetic in the log domain.

These are the plain-float versions used by the oracle, the inference kernels
and the decoder. Differentiable counterparts live in :mod:`segen.autodiff`.
"""

import math
from collections.abc import Iterable

import numpy as np

NEG_INF = float("-inf")


def log_add(a: float, b: float) -> float:
    """Return ``log(exp(a) + exp(b))``.

    ``-inf`` acts as the additive identity. The result is exactly symmetric in
    its arguments.
    """
    if __debug__ and (a != a or b != b):
        raise ValueError("log_add received NaN")
    hi, lo = (a, b) if a >= b else (b, a)
    if lo == NEG_INF:
        return hi
    return hi + math.log1p(math.exp(lo - hi))


def log_sum_exp(xs: Iterable[float]) -> float:
    """Return ``log(sum(exp(x) for x in xs))`` for a nonempty sequence."""
    values = np.asarray(list(xs), dtype=np.float64)
    if values.size == 0:
        raise ValueError("log_sum_exp of an empty sequence")
    if __debug__ and np.isnan(values).any():
        raise ValueError("log_sum_exp received NaN")
    hi = values.max()
    if hi == NEG_INF:
        return NEG_INF
    if hi == np.inf:
        return math.inf
    return float(hi + math.log(np.exp(values - hi).sum()))


def log_sum_exp_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Vectorised log-sum-exp along ``axis``; all ``-inf`` slices give ``-inf``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ValueError("log_sum_exp over an empty axis")
    hi = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    out = np.where(hi == NEG_INF, NEG_INF, out)
    return np.squeeze(out, axis=axis)
