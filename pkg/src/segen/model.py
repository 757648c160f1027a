"""Model hyperparameters, parameter store and padded batches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from collections.abc import Sequence

import numpy as np

from .autodiff import Parameter
from .corpus import PAD_ID, EncodedInstance, Vocabulary


@dataclass
class ModelConfig:
    vocab_size: int
    embedding_size: int = 100
    hidden_size: int = 512
    dropout: float = 0.3
    max_segment_len: int = 6
    allow_null_self_transition: bool = False
    use_null_record: bool = True
    precision: str = "float32"
    init_scale: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    V, e, H = cfg.vocab_size, cfg.embedding_size, cfg.hidden_size
    shapes = {"embedding": (V, e)}
    for direction in ("enc_fwd", "enc_bwd"):
        shapes[f"{direction}_Wx"] = (e, 4 * H)
        shapes[f"{direction}_Wh"] = (H, 4 * H)
        shapes[f"{direction}_b"] = (4 * H,)
    shapes.update({
        "dec_init_W": (2 * H, H),
        "dec_init_b": (H,),
        "dec_Wx": (e, 4 * H),
        "dec_Wh": (H, 4 * H),
        "dec_b": (4 * H,),
        "att_W": (H, 2 * H),
        "out_W1": (H, V),
        "out_W2": (2 * H, V),
        "out_b": (V,),
        "pgen_Wd": (H, H),
        "pgen_Wa": (2 * H, H),
        "pgen_b": (H,),
        "pgen_w": (H, 1),
        "pgen_c": (1,),
        "trans_M": (2 * H, e),
        "trans_N": (H, e),
        "stop_w": (H, 1),
        "stop_b": (1,),
    })
    return shapes


def _is_bias(name: str) -> bool:
    return name.endswith("_b") or name.endswith("_c")


class Model:
    """Parameters plus the train/eval switch and the dropout RNG."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary | None = None, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.training = False
        self.rng = np.random.default_rng(seed)
        init_rng = np.random.default_rng(seed)
        self.params: dict[str, Parameter] = {}
        s = config.init_scale
        for name, shape in parameter_shapes(config).items():
            if _is_bias(name):
                data = np.zeros(shape)
            else:
                data = init_rng.uniform(-s, s, size=shape)
            self.params[name] = Parameter(data, name=name)
        self.quantize()

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def train(self, mode: bool = True) -> Model:
        self.training = mode
        return self

    def eval(self) -> Model:
        return self.train(False)

    def quantize(self):
        """Round parameters to the configured storage precision."""
        if self.config.precision == "float32":
            for p in self.params.values():
                p.data = p.data.astype(np.float32).astype(np.float64)
        elif self.config.precision != "float64":
            raise ValueError(f"unknown precision {self.config.precision!r}")

    def load_embeddings(self, path, vocab: Vocabulary | None = None) -> int:
        """Overwrite rows of the embedding table from a Glove-style text file.

        Lines are ``token v1 ... v_e``; tokens absent from the vocabulary are
        skipped and unmatched vocabulary entries keep their random init.
        Returns the number of rows replaced.
        """
        vocab = vocab or self.vocab
        table = self.params["embedding"].data
        hit = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip().split(" ")
                if len(parts) != table.shape[1] + 1 or parts[0] not in vocab:
                    continue
                table[vocab.id(parts[0])] = np.array(parts[1:], dtype=np.float64)
                hit += 1
        self.quantize()
        return hit


@dataclass
class Batch:
    """Instances padded to common source length ``n``, target length ``m`` and ``J = K_max + 1``."""

    items: list[EncodedInstance]
    src: np.ndarray
    src_ext: np.ndarray
    src_mask: np.ndarray
    tgt: np.ndarray
    tgt_ext: np.ndarray
    tgt_len: np.ndarray
    record_mask: np.ndarray
    record_valid: np.ndarray
    K: np.ndarray

    @property
    def size(self) -> int:
        return len(self.items)

    @classmethod
    def from_encoded(cls, items: Sequence[EncodedInstance]) -> Batch:
        items = list(items)
        B = len(items)
        n = max(it.n for it in items)
        m = max(it.m for it in items)
        J = max(it.K for it in items) + 1
        src = np.full((B, n), PAD_ID, dtype=np.int64)
        src_ext = np.full((B, n), -1, dtype=np.int64)
        src_mask = np.zeros((B, n), dtype=bool)
        tgt = np.full((B, m), PAD_ID, dtype=np.int64)
        tgt_ext = np.full((B, m), PAD_ID, dtype=np.int64)
        rec = np.zeros((B, J, n), dtype=bool)
        valid = np.zeros((B, J), dtype=bool)
        for b, it in enumerate(items):
            src[b, : it.n] = it.src
            src_ext[b, : it.n] = it.src_ext
            src_mask[b, : it.n] = True
            tgt[b, : it.m] = it.tgt
            tgt_ext[b, : it.m] = it.tgt_ext
            rec[b, : it.K + 1, : it.n] = it.record_mask
            valid[b, : it.K + 1] = True
        return cls(
            items=items,
            src=src,
            src_ext=src_ext,
            src_mask=src_mask,
            tgt=tgt,
            tgt_ext=tgt_ext,
            tgt_len=np.array([it.m for it in items], dtype=np.int64),
            record_mask=rec,
            record_valid=valid,
            K=np.array([it.K for it in items], dtype=np.int64),
        )
