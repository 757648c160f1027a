import csv
import math

import numpy as np
import pytest

from segen.autodiff import Parameter
from segen.toolkit.checkpoint import load_checkpoint
from segen.toolkit.synthetic import make_synthetic
from segen.trainer import (METRIC_FIELDS, AdamState, NonFiniteGradient, TrainConfig, TrainingDiverged,
                           adam_step, clip_gradients, train)

from conftest import make_model


def test_defaults_and_profiles():
    cfg = TrainConfig()
    assert (cfg.hidden_size, cfg.embedding_size, cfg.dropout, cfg.batch_size, cfg.lr, cfg.lr_decay) == \
        (512, 100, 0.3, 64, 0.01, 0.1)
    assert cfg.eta is None and cfg.gamma == 1.0 and cfg.clip_norm == 5.0
    assert TrainConfig.for_profile("webnlg").hidden_size == 256
    assert TrainConfig.for_profile("e2e", lr=0.5).lr == 0.5
    with pytest.raises(ValueError):
        TrainConfig.for_profile("nope")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"hiden_size": 3})


def test_adam_zero_gradient_leaves_parameters(vocab):
    model = make_model(vocab)
    before = {k: p.data.copy() for k, p in model.params.items()}
    for p in model.parameters():
        p.grad = np.zeros_like(p.data)
    adam_step(model, AdamState(), 0.01)
    assert all(np.array_equal(before[k], p.data) for k, p in model.params.items())


def test_adam_first_step_is_signed_lr(vocab):
    model = make_model(vocab)
    rng = np.random.default_rng(0)
    before = {k: p.data.copy() for k, p in model.params.items()}
    for p in model.parameters():
        p.grad = rng.normal(size=p.shape)
    adam_step(model, AdamState(), 0.01)
    for k, p in model.params.items():
        step = p.data - before[k]
        assert np.allclose(step, -0.01 * np.sign(p.grad), rtol=1e-5, atol=1e-9)


def test_adam_rejects_non_finite_gradient(vocab):
    model = make_model(vocab)
    for p in model.parameters():
        p.grad = np.zeros_like(p.data)
    model["att_W"].grad[0, 0] = np.nan
    with pytest.raises(NonFiniteGradient, match="att_W"):
        adam_step(model, AdamState(), 0.01)


def test_float32_models_stay_representable(vocab):
    from segen.model import Model, ModelConfig

    model = Model(ModelConfig(vocab_size=len(vocab), embedding_size=3, hidden_size=2), vocab)
    for p in model.parameters():
        p.grad = np.full(p.shape, 0.3)
    adam_step(model, AdamState(), 1e-3)
    for p in model.parameters():
        assert np.array_equal(p.data, p.data.astype(np.float32).astype(np.float64))


def test_clipping(vocab):
    model = make_model(vocab)
    for p in model.parameters():
        p.grad = np.ones_like(p.data)
    norm = clip_gradients(model, 5.0)
    assert norm > 5.0
    assert math.sqrt(sum(float((p.grad ** 2).sum()) for p in model.parameters())) == pytest.approx(5.0)


def _small(**kw):
    base = dict(hidden_size=8, embedding_size=6, dropout=0.0, batch_size=16, max_epochs=2, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_reproducible_and_logs(tmp_path):
    data = make_synthetic(40, seed=1)
    a = train(data[:32], data[32:], _small(), metrics_path=tmp_path / "m.csv", checkpoint_path=tmp_path / "c.bin")
    b = train(data[:32], data[32:], _small())
    for k in a.model.params:
        assert np.array_equal(a.model.params[k].data, b.model.params[k].data)
    rows = list(csv.DictReader(open(tmp_path / "m.csv")))
    assert list(rows[0]) == METRIC_FIELDS and len(rows) == len(a.history)
    assert all(float(r["mean_expected_segments"]) >= 1.0 for r in rows)
    saved = load_checkpoint(tmp_path / "c.bin")
    for k in a.model.params:
        assert np.array_equal(saved.params[k].data, a.model.params[k].data)


def _scripted_validation(monkeypatch, losses):
    import segen.trainer as trainer

    it = iter(losses)
    monkeypatch.setattr(trainer, "evaluate_nll", lambda *a, **kw: (next(it), 2.0))


def test_strictly_decreasing_validation_never_decays(monkeypatch):
    _scripted_validation(monkeypatch, [5.0, 4.0, 3.0, 2.0])
    data = make_synthetic(20, seed=2)
    res = train(data[:16], data[16:], _small(max_epochs=4))
    assert [h.lr for h in res.history] == [0.01] * 4 and res.best_epoch == 4


def test_decay_on_increase_and_stop_below_min_lr(monkeypatch):
    _scripted_validation(monkeypatch, [5.0, 6.0, 4.0, 7.0, 7.0, 7.0, 7.0, 7.0, 7.0])
    data = make_synthetic(20, seed=2)
    res = train(data[:16], data[16:], _small(max_epochs=20))
    lrs = [h.lr for h in res.history]
    assert lrs[:4] == pytest.approx([1e-2, 1e-2, 1e-3, 1e-3])
    # decays at epochs 2, 4, 5, 6, 7 -> 1e-7 < 1e-6 stops after epoch 7
    assert len(res.history) == 7 and res.best_epoch == 3


def test_divergence_aborts_with_last_good_checkpoint(tmp_path, monkeypatch):
    import segen.trainer as trainer

    data = make_synthetic(24, seed=4)
    calls = {"n": 0}
    real = trainer.batch_loss

    def flaky(*a, **kw):
        out = real(*a, **kw)
        calls["n"] += 1
        if calls["n"] == 4:
            out.loss.data = np.array(np.nan)
        return out

    monkeypatch.setattr(trainer, "batch_loss", flaky)
    with pytest.raises(TrainingDiverged) as err:
        train(data[:16], data[16:], _small(batch_size=8, max_epochs=3), checkpoint_path=tmp_path / "c.bin")
    assert err.value.epoch == 2
    saved = load_checkpoint(tmp_path / "c.bin")
    for k, p in err.value.model.params.items():
        assert np.array_equal(saved.params[k].data, p.data)


def test_empty_training_set():
    with pytest.raises(ValueError):
        train([], [], _small())
