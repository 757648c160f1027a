"""Randomized tiny-model checks of the lattice against brute-force enumeration."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import oracle
from ..autodiff import grad_check, no_grad
from ..corpus import DataInstance, EncodedInstance, Record, Vocabulary, encode, linearize
from ..decoder import viterbi_align_batch
from ..lattice import expected_segments, forward_loglik, lattice_tables, precompute_segment_scores, training_loss
from ..model import Model, ModelConfig

WORDS = [f"w{i}" for i in range(6)]


@dataclass
class TinyCase:
    instance: EncodedInstance
    model: Model

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.instance.m, self.instance.K, self.model.config.max_segment_len


def tiny_case(rng: np.random.Generator, max_m: int = 6, max_K: int = 3, max_L: int = 3,
              max_hidden: int = 8, scale: float = 0.8) -> TinyCase:
    """A random float64 model (vocabulary of 10 incl. reserved ids) and instance."""
    vocab = Vocabulary(WORDS)
    K = int(rng.integers(1, max_K + 1))
    records = [Record(0)]
    for k in range(1, K + 1):
        attr = (str(rng.choice(WORDS)),)
        value = tuple(str(w) for w in rng.choice(WORDS + ["x7", "x8"], size=int(rng.integers(1, 3))))
        records.append(Record(k, attr, value))
    _, records = linearize(records)
    m = int(rng.integers(1, max_m + 1))
    target = [str(w) for w in rng.choice(WORDS + ["x7", "x9"], size=m)]
    inst = DataInstance(records, target)
    cfg = ModelConfig(vocab_size=len(vocab), embedding_size=int(rng.integers(2, 6)),
                      hidden_size=int(rng.integers(2, max_hidden + 1)), dropout=0.0,
                      max_segment_len=int(rng.integers(1, max_L + 1)),
                      allow_null_self_transition=bool(rng.random() < 0.3), precision="float64")
    model = Model(cfg, vocab, seed=int(rng.integers(2**31)))
    for p in model.parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)
    model.eval()
    return TinyCase(encode(inst, vocab), model)


@dataclass
class OracleReport:
    cases: int = 0
    infeasible: int = 0  # zero-probability texts; loglik must be -inf in both
    max_loglik_dev: float = 0.0
    max_kernel_dev: float = 0.0
    max_segments_dev: float = 0.0
    max_viterbi_dev: float = 0.0
    max_grad_rel_err: float = 0.0
    grad_cases: int = 0
    seconds: float = 0.0
    worst: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        return [
            f"cases                  {self.cases}",
            f"zero-probability cases {self.infeasible}",
            f"max |loglik dev|       {self.max_loglik_dev:.3e}",
            f"max |kernel dev|       {self.max_kernel_dev:.3e}",
            f"max |E[segments] dev|  {self.max_segments_dev:.3e}",
            f"max |viterbi dev|      {self.max_viterbi_dev:.3e}",
            f"grad cases             {self.grad_cases}",
            f"max grad rel err       {self.max_grad_rel_err:.3e}",
            f"seconds                {self.seconds:.1f}",
        ]


def _dev(a: float, b: float) -> float:
    """``|a - b|``, with two equal infinities counting as agreement and NaN as infinite."""
    if a == b:
        return 0.0
    d = abs(a - b)
    return d if np.isfinite(d) else np.inf


def run_oracle_suite(cases: int = 200, seed: int = 0, grad_cases: int = 3, eps: float = 1e-4) -> OracleReport:
    rng = np.random.default_rng(seed)
    rep = OracleReport()
    t0 = time.perf_counter()
    for c in range(cases):
        case = tiny_case(rng)
        inst, model = case.instance, case.model
        with no_grad():
            cache = precompute_segment_scores(inst, None, model)
            ll = float(forward_loglik(cache).data[0])
        table = lattice_tables(cache)
        scored = oracle.scored_segmentations(inst, model)
        brute_ll = oracle.log_sum_exp([s for _, s in scored])
        vit = viterbi_align_batch([inst], model)[0]
        best = max(s for _, s in scored)
        devs = {"max_loglik_dev": _dev(ll, brute_ll), "max_kernel_dev": _dev(table.loglik, brute_ll),
                "max_viterbi_dev": _dev(vit.score, best)}
        if np.isfinite(brute_ll):
            with no_grad():
                es = float(expected_segments(cache).data[0])
            brute_es = float(sum(np.exp(s - brute_ll) * seg.num_segments for seg, s in scored))
            devs["max_segments_dev"] = abs(es - brute_es)
        else:
            rep.infeasible += 1
        for k, v in devs.items():
            if v > getattr(rep, k):
                setattr(rep, k, v)
                rep.worst[k] = c
        rep.cases += 1
    for _ in range(grad_cases):
        case = tiny_case(rng, max_m=4, max_K=2, max_L=2, max_hidden=3)
        err = grad_check(case.model.parameters(), lambda: training_loss(case.instance, case.model), eps=eps)
        rep.max_grad_rel_err = max(rep.max_grad_rel_err, err)
        rep.grad_cases += 1
    rep.seconds = time.perf_counter() - t0
    return rep
