import pytest
from hypothesis import given
from hypothesis import strategies as st

from segen.corpus import (EOS_SEG, EOS_SEG_ID, EOT_ID, PAD_ID, UNK_ID, DataInstance, ParseError, Record,
                          TokenizationError, Vocabulary, build_vocab, encode, linearize, parse_e2e_mr,
                          parse_webnlg_triples, read_e2e_csv, read_webnlg, serialize_e2e_mr, tokenize,
                          write_e2e_csv)

CLOWNS_MR = "Name[Clowns], PriceRange[more than £30], EatType[pub], FamilyFriendly[no]"


def test_parse_four_attribute_mr():
    recs = parse_e2e_mr(CLOWNS_MR)
    assert len(recs) == 5 and recs[0].is_null
    assert [r.attribute for r in recs[1:]] == [("name",), ("pricerange",), ("eattype",), ("familyfriendly",)]
    assert recs[2].value == ("more", "than", "£", "30")
    spans = [r.token_span for r in recs[1:]]
    n = sum(len(r.tokens) for r in recs)
    covered = sorted(i for s, e in spans for i in range(s, e))
    assert covered == list(range(n))


def test_parse_minimal_and_errors():
    recs = parse_e2e_mr("A[b]")
    assert len(recs) == 2 and recs[1].attribute == ("a",) and recs[1].value == ("b",)
    with pytest.raises(ParseError) as err:
        parse_e2e_mr("A[b")
    assert err.value.offset == 2
    with pytest.raises(ParseError):
        parse_e2e_mr("A[]")
    with pytest.raises(ParseError):
        parse_e2e_mr("A]b[")


def test_parse_error_offset_is_in_bytes():
    with pytest.raises(ParseError) as err:
        parse_e2e_mr("£[x], B[y")
    assert err.value.offset == len("£[x], B[".encode())  # start of the unclosed value


def test_webnlg_triples():
    recs = parse_webnlg_triples("Cotto | eatType | pub")
    assert recs[1].attribute == ("eattype",) and recs[1].value == ("cotto", "pub")
    seven = "\n".join(f"s{i} | rel{i} | o{i}" for i in range(7))
    assert len(parse_webnlg_triples(seven)) == 8
    with pytest.raises(ParseError):
        parse_webnlg_triples("")
    with pytest.raises(ParseError, match="line 2"):
        parse_webnlg_triples("a | b | c\na | b")


def test_linearize_spans():
    tokens, recs = linearize([Record(0), Record(1, ("a",), ("b", "c"))])
    assert tokens == ["a", "b", "c"] and recs[1].token_span == (0, 3) and recs[0].token_span == (0, 0)
    tokens, recs = linearize([Record(0), Record(1, ("a",), ("b",)), Record(2, ("c",), ("d",))])
    assert recs[1].token_span == (0, 2) and recs[2].token_span == (2, 4)


def test_tokenizer_and_reserved_guard():
    assert tokenize("The Eagle, near Café-Rouge.") == ["the", "eagle", ",", "near", "café", "-", "rouge", "."]
    with pytest.raises(TokenizationError):
        tokenize("costs $ 5")


def test_build_vocab_min_count():
    insts = [DataInstance(parse_e2e_mr("x[y]"), ["a", "a", "b"])]
    v = build_vocab(insts, min_count=2)
    assert "a" in v and "b" not in v and v.id("b") == UNK_ID
    v1 = build_vocab(insts, min_count=1)
    assert all(t in v1 for t in ["a", "b", "x", "y"])
    with pytest.raises(ValueError):
        build_vocab(insts, min_count=0)


def test_vocab_reserved_ids_and_roundtrip(tmp_path):
    v = Vocabulary(["x", "y"])
    assert (v.id("<pad>"), v.id("<unk>"), v.id(EOS_SEG), v.id("<eot>")) == (PAD_ID, UNK_ID, EOS_SEG_ID, EOT_ID)
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().startswith("#reserved")
    assert Vocabulary.load(tmp_path / "v.txt") == v
    (tmp_path / "bad.txt").write_text("x\ny\n")
    with pytest.raises(ParseError):
        Vocabulary.load(tmp_path / "bad.txt")


def test_encode_copy_ids_for_oov():
    v = Vocabulary(["a"])
    inst = DataInstance(parse_e2e_mr("a[zz]"), ["zz", "a", "qq"])
    enc = encode(inst, v)
    assert enc.oov == ["zz"]
    assert enc.src_ext.tolist() == [v.id("a"), len(v)]
    assert enc.tgt_ext.tolist() == [len(v), v.id("a"), UNK_ID]
    assert enc.tgt.tolist() == [UNK_ID, v.id("a"), UNK_ID]
    assert enc.record_mask[0].sum() == 0 and enc.record_mask[1].all()


def test_instance_validation():
    with pytest.raises(ValueError):
        DataInstance(parse_e2e_mr("a[b]"), []).validate()
    with pytest.raises(ValueError):
        DataInstance(parse_e2e_mr("a[b]"), ["x", "$"]).validate()


def test_csv_and_webnlg_readers(tmp_path):
    insts = [DataInstance(parse_e2e_mr("name[x], food[y z]"), ["x", "serves", "y", "z"], [1, 0, 2, 2])]
    write_e2e_csv(tmp_path / "d.csv", insts)
    back = read_e2e_csv(tmp_path / "d.csv")
    assert back[0].target == insts[0].target and back[0].gold == [1, 0, 2, 2]
    assert serialize_e2e_mr(back[0].records) == serialize_e2e_mr(insts[0].records)
    (tmp_path / "w.txt").write_text("Cotto | eatType | pub\nCotto | near | Eagle\n\nCotto is a pub near Eagle.\n")
    w = read_webnlg(tmp_path / "w.txt")
    assert len(w) == 1 and w[0].K == 2 and w[0].target[-1] == "."


word = st.text(alphabet="abcdefgh0123", min_size=1, max_size=5)


@given(st.lists(st.tuples(st.lists(word, min_size=1, max_size=2), st.lists(word, min_size=1, max_size=3)),
                min_size=1, max_size=5))
def test_parse_serialize_roundtrip_and_span_cover(pairs):
    recs = [Record(0)] + [Record(i + 1, tuple(a), tuple(v)) for i, (a, v) in enumerate(pairs)]
    _, recs = linearize(recs)
    parsed = parse_e2e_mr(serialize_e2e_mr(recs))
    assert parsed == recs
    n = sum(len(r.tokens) for r in recs)
    owners = [sum(r.token_span[0] <= i < r.token_span[1] for r in recs[1:]) for i in range(n)]
    assert owners == [1] * n
