import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segen import autodiff as ad
from segen import oracle
from segen.autodiff import Parameter, Tensor, grad_check, no_grad
from segen.corpus import DataInstance, encode, parse_e2e_mr
from segen.encoder import encode_source
from segen.generator import segment_logprob
from segen.lattice import (SegmentScoreCache, batch_loss, dump_lattice, expected_segments, forward_loglik,
                           granularity_penalty, lattice_tables, precompute_segment_scores, training_loss)
from segen.model import Batch
from segen.toolkit.oracle_check import tiny_case

from conftest import make_model


def manual_cache(gen, trans, L):
    gen = np.asarray(gen, dtype=float)[None]
    trans = np.asarray(trans, dtype=float)[None]
    m, J = gen.shape[1], gen.shape[3]
    return SegmentScoreCache(gen=Tensor(gen), trans=Tensor(trans), lengths=np.array([m]),
                             K=np.array([J - 1]), L=L)


def uniform_cache(m, K, L):
    """Every segment and transition scores 0 in log space; self-transitions masked."""
    J = K + 1
    trans = np.zeros((m + 1, J, J))
    for p in range(1, m + 1):
        np.fill_diagonal(trans[p], -np.inf)
    return manual_cache(np.zeros((m, L, J)), trans, L)


def test_cache_counts_for_smallest_instance(vocab):
    model = make_model(vocab, L=1)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1]"), ["w1"]), vocab)
    with no_grad():
        cache = precompute_segment_scores(enc, None, model)
    gen, trans = cache.instance(0)
    assert gen.shape == (1, 1, 2) and np.isfinite(gen).all()
    assert trans[0, 0].shape == (2,) and np.isfinite(trans[0, 0]).all()


def test_cache_entries_equal_naive_recomputation(tiny):
    enc, model = tiny
    with no_grad():
        cache = precompute_segment_scores(enc, None, model)
        src = encode_source(enc, model)
        gen, _ = cache.instance(0)
        for a in range(enc.m):
            for l in range(1, model.config.max_segment_len + 1):
                for j in range(enc.K + 1):
                    if a + l > enc.m:
                        assert gen[a, l - 1, j] == -np.inf
                        continue
                    want = segment_logprob(enc, src, a + 1, a + l, j, model).item()
                    assert gen[a, l - 1, j] == pytest.approx(want, abs=1e-12)


def test_m1_loglik_is_single_segment_sum(vocab):
    model = make_model(vocab, L=3)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1], w2[w3]"), ["w3"]), vocab)
    with no_grad():
        cache = precompute_segment_scores(enc, None, model)
        ll = forward_loglik(cache).item()
        es = expected_segments(cache).item()
    gen, trans = cache.instance(0)
    assert ll == pytest.approx(float(np.logaddexp.reduce(trans[0, 0] + gen[0, 0])), abs=1e-14)
    assert es == 1.0


def test_m0_is_an_error():
    cache = manual_cache(np.zeros((0, 1, 2)), np.zeros((1, 2, 2)), 1)
    with pytest.raises(ValueError):
        forward_loglik(cache)


@pytest.mark.parametrize("m,K,L", [(1, 1, 1), (3, 1, 2), (4, 2, 2), (5, 3, 3), (6, 0, 6)])
def test_unit_scores_count_segmentations(m, K, L):
    with no_grad():
        ll = forward_loglik(uniform_cache(m, K, L)).item()
    assert ll == pytest.approx(math.log(oracle.count_labeled_segmentations(m, K, L)), abs=1e-12)


def test_equal_posterior_gives_one_and_a_half():
    with no_grad():
        e = expected_segments(uniform_cache(2, 1, 2)).item()
    assert e == pytest.approx(1.5, abs=1e-15)


def test_regularizer_examples():
    assert granularity_penalty(Tensor(np.array([5.0])), 3.0, 1.0).data[0] == 2.0
    e = Parameter(np.array([3.4]))
    out = granularity_penalty(e, 3.0, 1.0)
    out.backward(np.ones(1))
    assert out.data[0] == 1.0 and e.grad[0] == 0.0
    assert granularity_penalty(Tensor(np.array([40.0])), 3.0, math.inf).data[0] == 0.0


@settings(max_examples=50)
@given(st.floats(-10, 10), st.floats(0.1, 5))
def test_printed_penalty_and_hinge_share_gradients(x, gamma):
    if abs(abs(x) - gamma) < 1e-9:
        return
    a = Parameter(np.array([x]))
    ad.maximum(ad.absolute(a), gamma).backward(np.ones(1))
    b = Parameter(np.array([x]))
    ad.maximum(ad.absolute(b) - gamma, 0.0).backward(np.ones(1))
    assert a.grad[0] == b.grad[0]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_adding_a_record_cannot_lower_the_likelihood(seed):
    rng = np.random.default_rng(seed)
    m, J, L = int(rng.integers(1, 6)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
    gen = rng.normal(-2, 1, size=(m, L, J))
    trans = rng.normal(-1, 1, size=(m + 1, J, J))
    for p in range(1, m + 1):
        np.fill_diagonal(trans[p], -np.inf)
    restricted_gen, restricted_trans = gen.copy(), trans.copy()
    restricted_gen[..., -1] = -np.inf
    restricted_trans[..., -1] = -np.inf
    with no_grad():
        full = forward_loglik(manual_cache(gen, trans, L)).item()
        part = forward_loglik(manual_cache(restricted_gen, restricted_trans, L)).item()
    assert full >= part


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_lattice_matches_oracle(seed):
    case = tiny_case(np.random.default_rng(seed), max_m=5)
    inst, model = case.instance, case.model
    with no_grad():
        cache = precompute_segment_scores(inst, None, model)
        ll = forward_loglik(cache).item()
    brute = oracle.brute_loglik(inst, model)
    if brute == -math.inf:
        assert ll == -math.inf
        return
    assert ll == pytest.approx(brute, abs=1e-6)
    with no_grad():
        es = expected_segments(cache).item()
    assert es == pytest.approx(oracle.brute_expected_segments(inst, model), abs=1e-6)
    assert lattice_tables(cache).loglik == pytest.approx(brute, abs=1e-6)


def test_training_loss_gradient(tiny):
    enc, model = tiny
    assert grad_check(model.parameters(), lambda: training_loss(enc, model, eta=1.0, gamma=0.5)) <= 1e-3


def test_training_loss_components(tiny):
    enc, model = tiny
    with no_grad():
        cache = precompute_segment_scores(enc, None, model)
        ll = forward_loglik(cache).item()
        e = expected_segments(cache).item()
        assert training_loss(enc, model, gamma=math.inf).item() == pytest.approx(-ll, abs=1e-12)
        want = -ll + max(abs(e - enc.K), 1.0)
        assert training_loss(enc, model).item() == pytest.approx(want, abs=1e-12)
    with pytest.raises(ValueError):
        training_loss(enc, model, eta=0.5)


def test_batch_loss_is_mean_of_instance_losses(vocab):
    model = make_model(vocab, L=3)
    a = encode(DataInstance(parse_e2e_mr("w0[w1], w2[w3]"), ["w1", "w3", "w5"]), vocab)
    b = encode(DataInstance(parse_e2e_mr("w4[w5 w2]"), ["w5", "w2", "w0", "w1", "w2"]), vocab)
    with no_grad():
        both = batch_loss(model, Batch.from_encoded([a, b]), stop_weight=0.0).loss.item()
        each = [training_loss(x, model).item() for x in (a, b)]
    assert both == pytest.approx(sum(each) / 2, abs=1e-12)


def test_dump_lattice(tiny, tmp_path):
    enc, model = tiny
    with no_grad():
        table = lattice_tables(precompute_segment_scores(enc, None, model))
    path = tmp_path / "lat.tsv"
    with open(path, "w") as fh:
        dump_lattice(table, fh)
    rows = path.read_text().splitlines()
    assert rows[0].split("\t")[:2] == ["table", "i"]
    assert sum(r.startswith("alpha\t") for r in rows) == enc.m
    assert sum(r.startswith("log_count\t") for r in rows) == enc.m
