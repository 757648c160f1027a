"""Records, instances, vocabularies and the E2E / WebNLG readers."""

from __future__ import annotations

import csv
import re
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, UNK, EOS_SEG, EOT = "<pad>", "<unk>", "$", "<eot>"
RESERVED = (PAD, UNK, EOS_SEG, EOT)
PAD_ID, UNK_ID, EOS_SEG_ID, EOT_ID = range(4)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class ParseError(ValueError):
    """Malformed input; ``offset`` (bytes) or ``line`` (1-based) locates it when known."""

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        super().__init__(message)
        self.offset = offset
        self.line = line


class TokenizationError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and at punctuation boundaries."""
    if EOS_SEG in text:
        raise TokenizationError(f"reserved end-of-segment symbol {EOS_SEG!r} found in raw text: {text!r}")
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Record:
    index: int
    attribute: tuple[str, ...] = ()
    value: tuple[str, ...] = ()
    token_span: tuple[int, int] = (0, 0)

    @property
    def is_null(self) -> bool:
        return self.index == 0

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.attribute + self.value

    def label(self) -> str:
        return "Null" if self.is_null else " ".join(self.attribute)


NULL_RECORD = Record(0)


@dataclass
class DataInstance:
    records: list[Record]
    target: list[str]
    gold: list[int] | None = None  # planted per-token record labels (synthetic data only)

    @property
    def K(self) -> int:
        return len(self.records) - 1

    @property
    def source(self) -> list[str]:
        return [tok for r in self.records for tok in r.tokens]

    def validate(self):
        if self.K < 1:
            raise ValueError("an instance needs at least one non-null record")
        if not self.target:
            raise ValueError("an instance needs a nonempty target")
        bad = [t for t in self.target if t in RESERVED]
        if bad:
            raise ValueError(f"target contains reserved tokens {bad}")
        if self.gold is not None and len(self.gold) != len(self.target):
            raise ValueError("gold labels must have one entry per target token")


def _byte_offset(line: str, i: int) -> int:
    return len(line[:i].encode("utf-8"))


def _mr_error(what: str, line: str, i: int, tail: str = "") -> ParseError:
    offset = _byte_offset(line, i)
    return ParseError(f"{what} at byte offset {offset}{tail}", offset=offset)


def linearize(records: Sequence[Record]) -> tuple[list[str], list[Record]]:
    """Flatten records to ``attr1 value1 attr2 value2 ...`` and fill in their spans.

    Spans are half-open ``(start, end)`` token offsets; the null record keeps an
    empty span and contributes nothing.
    """
    tokens: list[str] = []
    placed: list[Record] = []
    for r in records:
        if r.is_null:
            placed.append(Record(0))
            continue
        start = len(tokens)
        tokens.extend(r.tokens)
        placed.append(Record(r.index, r.attribute, r.value, (start, len(tokens))))
    return tokens, placed


def _with_null(records: list[Record]) -> list[Record]:
    _, placed = linearize([NULL_RECORD] + records)
    return placed


def parse_e2e_mr(line: str) -> list[Record]:
    """Parse ``Attr[value], Attr[value], ...`` into records (null record first)."""
    records: list[Record] = []
    i, n = 0, len(line)
    while i < n:
        while i < n and (line[i].isspace() or line[i] == ","):
            i += 1
        if i >= n:
            break
        attr_start = i
        while i < n and line[i] not in "[]":
            i += 1
        if i >= n or line[i] != "[":
            raise _mr_error("expected '[' after attribute", line, attr_start)
        attribute = line[attr_start:i].strip()
        if not attribute:
            raise _mr_error("empty attribute", line, attr_start)
        i += 1
        value_start = i
        while i < n and line[i] not in "[]":
            i += 1
        if i >= n or line[i] != "]":
            raise _mr_error("unbalanced bracket: value", line, value_start, " is never closed")
        value = tokenize(line[value_start:i])
        if not value:
            raise _mr_error("empty value", line, value_start)
        i += 1
        records.append(Record(len(records) + 1, tuple(tokenize(attribute)), tuple(value)))
    if not records:
        raise ParseError("no records found")
    return _with_null(records)


def serialize_e2e_mr(records: Sequence[Record]) -> str:
    return ", ".join(f"{' '.join(r.attribute)}[{' '.join(r.value)}]" for r in records if not r.is_null)


def parse_webnlg_triples(lines: str | Iterable[str]) -> list[Record]:
    """Parse ``subject | relation | object`` lines; value = subject tokens + object tokens."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    records: list[Record] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) != 3:
            raise ParseError(f"line {lineno}: expected 3 '|'-separated fields, got {len(fields)}", line=lineno)
        subject, relation, obj = fields
        value = tokenize(subject) + tokenize(obj)
        if not value:
            raise ParseError(f"line {lineno}: empty subject and object", line=lineno)
        records.append(Record(len(records) + 1, tuple(tokenize(relation)), tuple(value)))
    if not records:
        raise ParseError("no triples found")
    return _with_null(records)


def read_e2e_csv(path: str | Path) -> list[DataInstance]:
    """Read an E2E-style CSV with ``mr`` and ``ref`` columns (``gold`` optional)."""
    instances = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            records = parse_e2e_mr(row["mr"])
            target = tokenize(row.get("ref") or "")
            gold = None
            if row.get("gold"):
                gold = [int(x) for x in row["gold"].split()]
            inst = DataInstance(records, target, gold)
            inst.validate()
            instances.append(inst)
    return instances


def write_e2e_csv(path: str | Path, instances: Sequence[DataInstance]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        has_gold = any(inst.gold is not None for inst in instances)
        fields = ["mr", "ref"] + (["gold"] if has_gold else [])
        writer = csv.DictWriter(fh, fieldnames=fields, quoting=csv.QUOTE_ALL)
        writer.writeheader()
        for inst in instances:
            row = {"mr": serialize_e2e_mr(inst.records), "ref": " ".join(inst.target)}
            if has_gold:
                row["gold"] = " ".join(map(str, inst.gold or []))
            writer.writerow(row)


def read_webnlg(path: str | Path) -> list[DataInstance]:
    """Read blocks of triple lines, a blank line, then one or more reference lines."""
    text = Path(path).read_text(encoding="utf-8")
    chunks = [c.strip("\n") for c in re.split(r"\n\s*\n", text) if c.strip()]
    instances = []
    pending: list[Record] | None = None
    for chunk in chunks:
        lines = chunk.splitlines()
        if all(line.count("|") == 2 for line in lines):
            pending = parse_webnlg_triples(lines)
            continue
        if pending is None:
            raise ParseError("reference block without preceding triples")
        for ref in lines:
            inst = DataInstance(pending, tokenize(ref))
            inst.validate()
            instances.append(inst)
        pending = None
    return instances


class Vocabulary:
    """Token/id bijection whose first ids are the reserved tokens."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def save(self, path: str | Path):
        header = "#reserved " + " ".join(f"{t}={i}" for i, t in enumerate(RESERVED))
        Path(path).write_text(header + "\n" + "\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> Vocabulary:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        header = lines[0].split()
        if not header or header[0] != "#reserved":
            raise ParseError("vocabulary file lacks the #reserved header")
        reserved = dict(item.rsplit("=", 1) for item in header[1:])
        for i, tok in enumerate(RESERVED):
            if int(reserved.get(tok, -1)) != i:
                raise ParseError(f"reserved token {tok!r} must have id {i}")
        tokens = [t for t in lines[1:] if t != ""]
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise ParseError("reserved tokens must open the vocabulary")
        return cls(tokens[len(RESERVED):])


def build_vocab(instances: Iterable[DataInstance], min_count: int = 1) -> Vocabulary:
    """Keep tokens (source and target) seen at least ``min_count`` times."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for inst in instances:
        counts.update(inst.source)
        counts.update(inst.target)
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in RESERVED),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EncodedInstance:
    """Id arrays for one instance.

    Source tokens missing from the vocabulary get instance-local extended ids
    ``len(vocab) + k`` so the copy branch can still reproduce them.
    """

    instance: DataInstance
    src: np.ndarray  # (n,) vocabulary ids, OOV -> UNK
    src_ext: np.ndarray  # (n,) extended ids
    tgt: np.ndarray  # (m,) vocabulary ids for decoder input
    tgt_ext: np.ndarray  # (m,) extended ids for scoring
    record_mask: np.ndarray  # (K+1, n) bool
    oov: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.src)

    @property
    def m(self) -> int:
        return len(self.tgt)

    @property
    def K(self) -> int:
        return self.record_mask.shape[0] - 1


def encode(instance: DataInstance, vocab: Vocabulary, target: Sequence[str] | None = None) -> EncodedInstance:
    source, records = linearize(instance.records)
    if not source:
        raise ValueError("empty linearized source")
    oov: list[str] = []
    src_ext = []
    for tok in source:
        if tok in vocab:
            src_ext.append(vocab.id(tok))
        else:
            if tok not in oov:
                oov.append(tok)
            src_ext.append(len(vocab) + oov.index(tok))
    target = instance.target if target is None else target
    tgt_ext = []
    for tok in target:
        if tok in vocab:
            tgt_ext.append(vocab.id(tok))
        elif tok in oov:
            tgt_ext.append(len(vocab) + oov.index(tok))
        else:
            tgt_ext.append(UNK_ID)
    mask = np.zeros((len(records), len(source)), dtype=bool)
    for j, r in enumerate(records):
        start, end = r.token_span
        mask[j, start:end] = True
    return EncodedInstance(
        instance=instance,
        src=np.array([vocab.id(t) for t in source], dtype=np.int64),
        src_ext=np.array(src_ext, dtype=np.int64),
        tgt=np.array([vocab.id(t) for t in target], dtype=np.int64),
        tgt_ext=np.array(tgt_ext, dtype=np.int64),
        record_mask=mask,
        oov=oov,
    )
