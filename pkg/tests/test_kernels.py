import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segen import _kernels_py, kernels
from segen.autodiff import Tensor, no_grad
from segen.lattice import SegmentScoreCache, expected_segments, forward_loglik

try:
    from segen import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def random_tables(seed):
    rng = np.random.default_rng(seed)
    m, J, L = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
    gen = rng.normal(-3, 2, size=(m, L, J))
    trans = rng.normal(-1, 1, size=(m + 1, J, J))
    for p in range(1, m + 1):
        np.fill_diagonal(trans[p], -np.inf)
    for a in range(m):
        gen[a, m - a:, :] = -np.inf
    if rng.random() < 0.3:
        gen[rng.random(gen.shape) < 0.2] = -np.inf
    return gen, trans


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_env_forces_python(monkeypatch):
    monkeypatch.setenv("SEGEN_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.semimarkov_forward is _kernels_py.semimarkov_forward
    finally:
        monkeypatch.delenv("SEGEN_PURE_PYTHON")
        importlib.reload(kernels)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_fallback_matches_differentiable_dp(seed):
    gen, trans = random_tables(seed)
    m, L, J = gen.shape
    alpha, count = _kernels_py.semimarkov_forward(gen, trans)
    cache = SegmentScoreCache(gen=Tensor(gen[None]), trans=Tensor(trans[None]), lengths=np.array([m]),
                              K=np.array([J - 1]), L=L)
    with no_grad():
        ll = forward_loglik(cache).item()
    got = float(np.logaddexp.reduce(alpha[-1]))
    if ll == -np.inf:
        assert got == -np.inf
        return
    assert got == pytest.approx(ll, abs=1e-10)
    with no_grad():
        e = expected_segments(cache).item()
    assert float(np.exp(np.logaddexp.reduce(count[-1]) - got)) == pytest.approx(e, abs=1e-10)


@pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")
@settings(max_examples=60, deadline=None)
@given(st.integers(0, 100_000))
def test_compiled_matches_fallback(seed):
    gen, trans = random_tables(seed)
    a_py, c_py = _kernels_py.semimarkov_forward(gen, trans)
    a_c, c_c = _kernels_c.semimarkov_forward(gen, trans)
    assert np.allclose(a_py, a_c, atol=1e-12, rtol=0)
    assert np.array_equal(np.isinf(c_py), np.isinf(c_c))
    fin = np.isfinite(c_py)
    assert np.allclose(c_py[fin], c_c[fin], atol=1e-12, rtol=0)
    s_py, seg_py = _kernels_py.semimarkov_viterbi(gen, trans)
    s_c, seg_c = _kernels_c.semimarkov_viterbi(gen, trans)
    assert s_py == s_c and seg_py == seg_c


@pytest.mark.parametrize("impl", [m for m in (_kernels_py, _kernels_c) if m is not None])
def test_viterbi_path_score_and_shape(impl):
    for seed in range(30):
        gen, trans = random_tables(seed)
        score, segs = impl.semimarkov_viterbi(gen, trans)
        if score == -np.inf:
            assert segs == []
            continue
        assert segs[0][0] == 0 and segs[-1][1] == gen.shape[0]
        total, prev = None, None
        for a, e, j in segs:
            t = trans[0, 0, j] if prev is None else trans[a, prev, j]
            total = t if total is None else total + t
            total = total + gen[a, e - a - 1, j]
            prev = j
        assert total == score
        alpha, _ = impl.semimarkov_forward(gen, trans)
        assert score <= np.logaddexp.reduce(alpha[-1]) + 1e-12
