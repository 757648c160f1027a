import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segen.autodiff import Tensor, no_grad
from segen.corpus import DataInstance, Record, encode, parse_e2e_mr
from segen.encoder import encode_batch, encode_source, record_repr
from segen.model import Batch, Model, ModelConfig

from conftest import make_model


def test_one_vector_per_source_token(vocab):
    model = make_model(vocab, hidden=5)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1]"), ["w1"]), vocab)
    with no_grad():
        out = encode_source(enc, model)
    assert out.h.shape == (2, 10)
    single = DataInstance([Record(0), Record(1, (), ("w1",), (0, 1))], ["w1"])
    with no_grad():
        assert encode_source(encode(single, vocab), model).h.shape == (1, 10)


def test_width_is_twice_hidden(vocab):
    cfg = ModelConfig(vocab_size=len(vocab), embedding_size=4, hidden_size=512, dropout=0.0)
    model = Model(cfg, vocab)
    enc = encode(DataInstance(parse_e2e_mr("w0[w1]"), ["w1"]), vocab)
    with no_grad():
        assert encode_source(enc, model).h.shape[-1] == 1024


def test_masks_and_null_record(tiny):
    enc, model = tiny
    with no_grad():
        out = encode_source(enc, model)
    assert not out.record_masks[0].any()
    assert (out.record_masks[1:].sum(axis=0) == 1).all()
    assert np.all(out.record_reprs.data[0] == 0.0)


def test_batch_independence(vocab):
    model = make_model(vocab, hidden=4)
    a = encode(DataInstance(parse_e2e_mr("w0[w1], w2[w3]"), ["w1"]), vocab)
    b = encode(DataInstance(parse_e2e_mr("w4[w5 w1 w2]"), ["w5", "w2"]), vocab)
    with no_grad():
        ab = encode_batch(model, Batch.from_encoded([a, b]))
        ba = encode_batch(model, Batch.from_encoded([b, a]))
    assert np.array_equal(ab.h.data[0, :a.n], ba.h.data[1, :a.n])
    assert np.array_equal(ab.h.data[1, :b.n], ba.h.data[0, :b.n])
    assert np.array_equal(ab.init_h.data[0], ba.init_h.data[1])


def test_record_repr_examples(vocab):
    assert record_repr(Record(1, (), ("x",)), np.array([[0.3, -1.0]])).data.tolist() == [0.3, -1.0]
    assert record_repr(Record(0), np.zeros((6, 3))).data.tolist() == [0.0, 0.0, 0.0]
    pair = np.array([[1.0, -2.0], [0.0, 5.0]])
    assert record_repr(Record(1, ("a",), ("b",)), pair).data.tolist() == [1.0, 5.0]


def test_record_repr_pools_attribute_and_value(vocab):
    table = np.zeros((len(vocab), 2))
    table[vocab.id("w0")] = [9.0, 0.0]
    table[vocab.id("w1")] = [0.0, 7.0]
    out = record_repr(Record(1, ("w0",), ("w1",)), table, vocab)
    assert out.data.tolist() == [9.0, 7.0]


@settings(max_examples=30)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=3, max_size=3), min_size=1, max_size=5), st.randoms())
def test_record_repr_permutation_invariant(rows, rnd):
    perm = list(rows)
    rnd.shuffle(perm)
    rec = Record(1, (), tuple("x" * len(rows)))
    assert record_repr(rec, np.array(rows)).data.tolist() == record_repr(rec, np.array(perm)).data.tolist()


def test_encoding_deterministic_with_dropout_off(tiny):
    enc, model = tiny
    with no_grad():
        a = encode_source(enc, model).h.data
        b = encode_source(enc, model).h.data
    assert np.array_equal(a, b)


def test_glove_loader(tmp_path, vocab):
    model = make_model(vocab, emb=3)
    (tmp_path / "g.txt").write_text("w1 0.5 0.25 -1\nnotaword 1 1 1\nw2 1 2\n")
    assert model.load_embeddings(tmp_path / "g.txt") == 1
    assert model["embedding"].data[vocab.id("w1")].tolist() == [0.5, 0.25, -1.0]
