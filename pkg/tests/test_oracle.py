import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segen import oracle
from segen.autodiff import no_grad
from segen.corpus import DataInstance, encode, parse_e2e_mr
from segen.oracle import EnumerationTooLarge, LabeledSegmentation, enumerate_segmentations

from conftest import make_model


def test_hand_enumeration_m2_l2_k1():
    segs = set(enumerate_segmentations(2, 1, 2))
    assert segs == {
        LabeledSegmentation((1, 2), (0, 1)),
        LabeledSegmentation((1, 2), (1, 0)),
        LabeledSegmentation((2,), (0,)),
        LabeledSegmentation((2,), (1,)),
    }


def test_small_counts():
    assert len(list(enumerate_segmentations(1, 3, 2))) == 4
    assert len(list(enumerate_segmentations(5, 0, 5))) == 1
    assert len(list(enumerate_segmentations(3, 0, 3, allow_null_self=True))) == 4


def test_guard():
    with pytest.raises(EnumerationTooLarge, match="shrink"):
        list(enumerate_segmentations(30, 4, 6))


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(0, 3), st.integers(1, 4), st.booleans())
def test_enumeration_is_valid_and_duplicate_free(m, K, L, self_ok):
    segs = list(enumerate_segmentations(m, K, L, self_transition_allowed=self_ok))
    assert len(segs) == len(set(segs)) == oracle.count_labeled_segmentations(m, K, L, self_ok)
    for s in segs:
        spans = s.segments()
        assert spans[0][0] == 0 and spans[-1][1] == m
        assert all(0 < e - a <= L for a, e, _ in spans)
        assert all(0 <= j <= K for j in s.labels)
        if not self_ok:
            assert all(x != y for x, y in zip(s.labels, s.labels[1:]))


def test_m1_expected_segments_and_order_invariance(vocab):
    model = make_model(vocab, L=2)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1], w2[w3]"), ["w1"]), vocab)
    assert oracle.brute_expected_segments(enc, model) == pytest.approx(1.0, abs=1e-15)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1], w2[w3]"), ["w1", "w3", "w2"]), vocab)
    scored = oracle.scored_segmentations(enc, model)
    fwd = oracle.log_sum_exp([s for _, s in scored])
    rev = oracle.log_sum_exp([s for _, s in reversed(scored)])
    assert fwd == pytest.approx(rev, abs=1e-12)


def test_single_combination_equals_its_product(vocab):
    model = make_model(vocab, L=1)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1]"), ["w3"]), vocab)
    scored = oracle.scored_segmentations(enc, model, L=1)
    with no_grad():
        from segen.lattice import precompute_segment_scores

        gen, trans = precompute_segment_scores(enc, None, model).instance(0)
    assert [s.labels for s, _ in scored] == [(0,), (1,)]
    for seg, score in scored:
        j = seg.labels[0]
        assert score == pytest.approx(trans[0, 0, j] + gen[0, 0, j], abs=1e-12)
    best, top = oracle.brute_argmax(enc, model)
    assert top == max(s for _, s in scored)
