"""Minibatch Adam training with plateau learning-rate decay."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .corpus import DataInstance, EncodedInstance, Vocabulary, build_vocab, encode
from .lattice import batch_loss
from .model import Batch, Model, ModelConfig

METRIC_FIELDS = ["epoch", "train_loss", "val_loss", "lr", "mean_expected_segments"]

PROFILES = {
    "e2e": {"hidden_size": 512},
    "webnlg": {"hidden_size": 256},
}


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.name = name


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; ``model`` holds the last good parameters."""

    def __init__(self, message: str, model: Model, epoch: int, history: list):
        super().__init__(message)
        self.model = model
        self.epoch = epoch
        self.history = history


@dataclass
class TrainConfig:
    hidden_size: int = 512
    embedding_size: int = 100
    dropout: float = 0.3
    batch_size: int = 64
    lr: float = 0.01
    lr_decay: float = 0.1
    min_lr: float = 1e-6
    max_epochs: int = 30
    eta: float | None = None  # None: each instance's record count
    gamma: float = 1.0
    max_segment_len: int = 6
    clip_norm: float = 5.0
    stop_weight: float = 1.0
    min_count: int = 1
    seed: int = 0
    precision: str = "float32"
    allow_null_self_transition: bool = False
    use_null_record: bool = True
    val_includes_penalty: bool = False

    @classmethod
    def for_profile(cls, name: str, **overrides) -> TrainConfig:
        if name not in PROFILES:
            raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
        return cls(**{**PROFILES[name], **overrides})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown training option(s): {', '.join(unknown)}")
        return cls(**d)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, embedding_size=self.embedding_size,
                           hidden_size=self.hidden_size, dropout=self.dropout,
                           max_segment_len=self.max_segment_len,
                           allow_null_self_transition=self.allow_null_self_transition,
                           use_null_record=self.use_null_record, precision=self.precision)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def clip_gradients(model: Model, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    sq = 0.0
    for name, p in model.params.items():
        if p.grad is None:
            continue
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
        sq += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(sq)
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for p in model.params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


def adam_step(model: Model, state: AdamState, lr: float):
    """One Adam update of every parameter that received a gradient, then re-quantize."""
    for name, p in model.params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(name)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in model.params.items():
        if p.grad is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad * p.grad
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    model.quantize()


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    mean_expected_segments: float

    def row(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: Model
    vocab: Vocabulary
    history: list[EpochLog]
    best_epoch: int


def batches(items: list, size: int, rng: np.random.Generator | None = None):
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    for s in range(0, len(items), size):
        yield [items[i] for i in order[s:s + size]]


def evaluate_nll(model: Model, items: list[EncodedInstance], batch_size: int = 64,
                 eta=None, gamma: float = 1.0, include_penalty: bool = False) -> tuple[float, float]:
    """Mean per-instance negative log-likelihood and mean expected segment count (no dropout).

    With ``include_penalty`` the granularity penalty is added to each instance's NLL.
    """
    was = model.training
    model.eval()
    nll, segs = [], []
    with no_grad():
        for chunk in batches(items, batch_size):
            out = batch_loss(model, Batch.from_encoded(chunk), eta=eta, gamma=gamma, stop_weight=0.0)
            nll.extend(out.nll + out.penalty if include_penalty else out.nll)
            segs.extend(out.expected_segments)
    model.train(was)
    return float(np.mean(nll)), float(np.mean(segs))


def _snapshot(model: Model) -> dict:
    return {k: p.data.copy() for k, p in model.params.items()}


def _restore(model: Model, snap: dict):
    for k, v in snap.items():
        model.params[k].data = v.copy()


def train(train_data: list[DataInstance], valid_data: list[DataInstance], config: TrainConfig,
          vocab: Vocabulary | None = None, metrics_path: str | Path | None = None,
          checkpoint_path: str | Path | None = None, log=None) -> TrainResult:
    """Train until the learning rate decays below ``min_lr`` or ``max_epochs`` is reached.

    The learning rate is multiplied by ``lr_decay`` whenever validation NLL fails
    to improve. The best-validation parameters are returned (and saved to
    ``checkpoint_path`` when given). Identical inputs and seed give identical
    parameters.
    """
    from .toolkit.checkpoint import save_checkpoint

    if not train_data:
        raise ValueError("empty training set")
    vocab = vocab or build_vocab(train_data, config.min_count)
    train_items = [encode(x, vocab) for x in train_data]
    valid_items = [encode(x, vocab) for x in valid_data] or train_items
    model = Model(config.model_config(len(vocab)), vocab, seed=config.seed)
    rng = np.random.default_rng(config.seed + 1)
    adam = AdamState()
    lr = config.lr
    best_val, best_epoch = math.inf, 0
    best = _snapshot(model)
    history: list[EpochLog] = []
    writer = fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
    try:
        for epoch in range(1, config.max_epochs + 1):
            model.train()
            total, count = 0.0, 0
            for chunk in batches(train_items, config.batch_size, rng):
                model.zero_grad()
                out = batch_loss(model, Batch.from_encoded(chunk), eta=config.eta, gamma=config.gamma,
                                 stop_weight=config.stop_weight)
                value = float(out.loss.data)
                try:
                    if not math.isfinite(value):
                        raise FloatingPointError(f"non-finite training loss {value}")
                    out.loss.backward()
                    clip_gradients(model, config.clip_norm)
                    adam_step(model, adam, lr)
                except FloatingPointError as err:
                    _restore(model, best)
                    if checkpoint_path is not None:
                        save_checkpoint(checkpoint_path, model)
                    raise TrainingDiverged(f"training diverged in epoch {epoch}: {err}", model, epoch,
                                           history) from err
                total += value * len(chunk)
                count += len(chunk)
            val, segs = evaluate_nll(model, valid_items, config.batch_size, config.eta, config.gamma,
                                     config.val_includes_penalty)
            entry = EpochLog(epoch, total / count, val, lr, segs)
            history.append(entry)
            if writer is not None:
                writer.writerow(entry.row())
                fh.flush()
            if log is not None:
                log(entry)
            if val < best_val:
                best_val, best_epoch = val, epoch
                best = _snapshot(model)
                if checkpoint_path is not None:
                    save_checkpoint(checkpoint_path, model)
            else:
                lr *= config.lr_decay
                if lr < config.min_lr:
                    break
    finally:
        if fh is not None:
            fh.close()
    _restore(model, best)
    model.eval()
    return TrainResult(model, vocab, history, best_epoch)
