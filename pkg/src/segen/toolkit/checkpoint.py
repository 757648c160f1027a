"""Self-describing model checkpoints.

Layout: a UTF-8 text header followed by a little-endian binary payload::

    SEGEN1
    dtype f4
    config {"vocab_size": ..., ...}
    vocab <N>
    "<token>"            (N lines, JSON-quoted)
    params <P>
    <name> <d1>,<d2>,...  (P lines, payload order)
    end
    <payload>
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..corpus import Vocabulary
from ..model import Model, ModelConfig, parameter_shapes

MAGIC = "SEGEN1"
DTYPES = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Model, dtype: str | None = None):
    """Write ``model`` (config, vocabulary and parameters) to ``path``.

    ``dtype`` defaults to ``f4`` for float32 models and ``f8`` otherwise.
    """
    if dtype is None:
        dtype = "f4" if model.config.precision == "float32" else "f8"
    if dtype not in DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    if model.vocab is None:
        raise CheckpointError("model has no vocabulary attached")
    lines = [MAGIC, f"dtype {dtype}", "config " + json.dumps(model.config.to_dict(), sort_keys=True),
             f"vocab {len(model.vocab)}"]
    lines += [json.dumps(t) for t in model.vocab.itos]
    lines.append(f"params {len(model.params)}")
    for name, p in model.params.items():
        lines.append(f"{name} {','.join(str(d) for d in p.data.shape)}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p.data, dtype=DTYPES[dtype]).tobytes()
                       for p in model.params.values())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def _readline(buf: bytes, pos: int) -> tuple[str, int]:
    end = buf.find(b"\n", pos)
    if end < 0:
        raise CheckpointError("truncated checkpoint header")
    return buf[pos:end].decode("utf-8"), end + 1


def load_checkpoint(path: str | Path) -> Model:
    buf = Path(path).read_bytes()
    line, pos = _readline(buf, 0)
    if line != MAGIC:
        raise CheckpointError(f"not a checkpoint (expected magic {MAGIC!r})")
    line, pos = _readline(buf, pos)
    key, _, dtype = line.partition(" ")
    if key != "dtype" or dtype not in DTYPES:
        raise CheckpointError(f"bad dtype line {line!r}")
    line, pos = _readline(buf, pos)
    if not line.startswith("config "):
        raise CheckpointError("missing config line")
    config = ModelConfig.from_dict(json.loads(line[len("config "):]))
    line, pos = _readline(buf, pos)
    n_vocab = int(line.split()[1])
    tokens = []
    for _ in range(n_vocab):
        line, pos = _readline(buf, pos)
        tokens.append(json.loads(line))
    vocab = Vocabulary()
    for t in tokens[len(vocab):]:
        vocab.add(t)
    if vocab.itos != tokens:
        raise CheckpointError("vocabulary does not start with the reserved tokens")
    line, pos = _readline(buf, pos)
    n_params = int(line.split()[1])
    layout = []
    for _ in range(n_params):
        line, pos = _readline(buf, pos)
        name, dims = line.split(" ")
        layout.append((name, tuple(int(d) for d in dims.split(",") if d)))
    line, pos = _readline(buf, pos)
    if line != "end":
        raise CheckpointError("header not terminated by 'end'")
    expected = parameter_shapes(config)
    if dict(layout) != expected:
        raise CheckpointError("parameter layout does not match the stored config")
    model = Model(config, vocab)
    dt = np.dtype(DTYPES[dtype])
    for name, shape in layout:
        size = int(np.prod(shape)) * dt.itemsize
        if pos + size > len(buf):
            raise CheckpointError(f"payload truncated in parameter {name!r}")
        model.params[name].data = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)),
                                                offset=pos).astype(np.float64).reshape(shape)
        pos += size
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after the payload")
    return model
