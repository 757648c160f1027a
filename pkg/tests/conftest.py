import numpy as np
import pytest

from segen.corpus import DataInstance, Vocabulary, encode, parse_e2e_mr
from segen.model import Model, ModelConfig

WORDS = ["w0", "w1", "w2", "w3", "w4", "w5"]


def make_model(vocab, hidden=3, emb=4, L=2, seed=1, scale=0.8, **kw):
    cfg = ModelConfig(vocab_size=len(vocab), embedding_size=emb, hidden_size=hidden, dropout=0.0,
                      max_segment_len=L, precision="float64", **kw)
    model = Model(cfg, vocab, seed=seed)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)
    return model.eval()


@pytest.fixture
def vocab():
    return Vocabulary(WORDS)


@pytest.fixture
def tiny(vocab):
    """Two records, four target tokens, L=2."""
    inst = DataInstance(parse_e2e_mr("w0[w1], w2[w3 w4]"), ["w1", "w5", "w3", "w4"])
    return encode(inst, vocab), make_model(vocab)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
