"""Corpus loading: column files, soft-word labels, vocabularies, embeddings.

Corpus files are UTF-8, four whitespace-separated columns per character
(char, segmentation label, POS tag, entity tag), with blank lines between
sentences. Entity tags use either BMES (B-/M-/E-/S-/O) or BIO (B-/I-/O)
schemes. A "character" throughout is one Unicode scalar value.
"""
from __future__ import annotations

import logging
import sys
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ConfigError

log = logging.getLogger(__name__)

SEG_LABELS = ("B", "M", "E", "S")
NONE_LABEL = "NONE"
PAD = "<pad>"
UNK = "<unk>"

Span = tuple[int, int, str]  # start, end inclusive, type


class ParseError(ValueError):
    pass


@dataclass
class Sentence:
    """One annotated sentence; ids are filled in by ``Vocab.encode``."""

    chars: list[str]
    seg_labels: list[str]
    pos_tags: list[str]
    entities: set[Span] = field(default_factory=set)
    char_ids: np.ndarray | None = None
    seg_ids: np.ndarray | None = None
    pos_ids: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.chars)
        if len(self.seg_labels) != n or len(self.pos_tags) != n:
            raise ParseError(f"label sequences do not all have length {n}")
        for lab in self.seg_labels:
            if lab not in SEG_LABELS:
                raise ParseError(f"invalid segmentation label {lab!r}")
        for start, end, _ in self.entities:
            if not 0 <= start <= end < n:
                raise ParseError(f"entity span ({start},{end}) outside sentence of length {n}")

    def __len__(self):
        return len(self.chars)

    @property
    def text(self) -> str:
        return "".join(self.chars)


def derive_soft_word_labels(words: list[str]) -> list[str]:
    """BMES labels for the concatenation of segmented words."""
    labels: list[str] = []
    for w in words:
        if not w:
            raise ValueError("empty word in segmentation")
        if len(w) == 1:
            labels.append("S")
        else:
            labels.extend(["B"] + ["M"] * (len(w) - 2) + ["E"])
    return labels


def check_segmentation(words: list[str], chars: list[str]):
    if list("".join(words)) != chars:
        raise ValueError("segmented words do not concatenate to the sentence characters")


# ---------------------------------------------------------------------------
# tag scheme <-> span conversion


def bio_tags_to_spans(tags: list[str]) -> set[Span]:
    """BIO tags to spans; an I- continuing nothing is repaired to B- and logged."""
    spans: set[Span] = set()
    start, cur = -1, None
    for i, tag in enumerate(tags):
        if tag == "O" or tag == "":
            if cur is not None:
                spans.add((start, i - 1, cur))
                cur = None
            continue
        kind, _, etype = tag.partition("-")
        if kind == "I" and cur == etype:
            continue
        if kind == "I":
            log.warning("repairing I-%s at position %d to B-%s", etype, i, etype)
        if cur is not None:
            spans.add((start, i - 1, cur))
        start, cur = i, etype
    if cur is not None:
        spans.add((start, len(tags) - 1, cur))
    return spans


def bmes_tags_to_spans(tags: list[str]) -> set[Span]:
    """BMES tags to spans; dangles and mid-segment type switches are repaired."""
    spans: set[Span] = set()
    start, cur = -1, None

    def close(end):
        nonlocal cur
        if cur is not None:
            spans.add((start, end, cur))
            cur = None

    for i, tag in enumerate(tags):
        if tag == "O" or tag == "":
            if cur is not None:
                log.warning("unterminated entity segment closed at position %d", i - 1)
            close(i - 1)
            continue
        kind, _, etype = tag.partition("-")
        if kind == "S":
            close(i - 1)
            spans.add((i, i, etype))
        elif kind == "B":
            close(i - 1)
            start, cur = i, etype
        elif kind in ("M", "E"):
            if cur != etype:
                log.warning("repairing %s-%s at position %d to B-%s", kind, etype, i, etype)
                close(i - 1)
                start, cur = i, etype
            if kind == "E":
                close(i)
        else:
            raise ParseError(f"unknown entity tag {tag!r}")
    close(len(tags) - 1)
    return spans


def spans_to_bio_tags(spans: set[Span], n: int) -> list[str]:
    tags = ["O"] * n
    for start, end, etype in sorted(spans):
        tags[start] = f"B-{etype}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{etype}"
    return tags


def spans_to_bmes_tags(spans: set[Span], n: int) -> list[str]:
    tags = ["O"] * n
    for start, end, etype in sorted(spans):
        if start == end:
            tags[start] = f"S-{etype}"
        else:
            tags[start] = f"B-{etype}"
            for i in range(start + 1, end):
                tags[i] = f"M-{etype}"
            tags[end] = f"E-{etype}"
    return tags


# ---------------------------------------------------------------------------
# reading


def read_corpus(path: str, fmt: str = "column-bmes",
                max_len: int = 256) -> list[Sentence]:
    """Read a 4-column corpus file; ``fmt`` picks the entity tag scheme."""
    if fmt not in ("column-bmes", "column-bio"):
        raise ConfigError(f"unknown corpus format {fmt!r}")
    to_spans = bmes_tags_to_spans if fmt == "column-bmes" else bio_tags_to_spans
    sentences: list[Sentence] = []
    rows: list[tuple[str, str, str, str]] = []

    def flush():
        if not rows:
            return
        kept = rows[:max_len]
        if len(rows) > max_len:
            log.warning("sentence truncated from %d to %d characters", len(rows), max_len)
        chars = [r[0] for r in kept]
        segs = [r[1] for r in kept]
        pos = [r[2] for r in kept]
        spans = to_spans([r[3] for r in kept])
        sentences.append(Sentence(chars, segs, pos, spans))
        rows.clear()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            cols = line.split()
            if len(cols) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(cols)}")
            rows.append(tuple(cols))
    flush()
    return sentences


def write_corpus(path: str, sentences: list[Sentence], fmt: str = "column-bmes"):
    to_tags = spans_to_bmes_tags if fmt == "column-bmes" else spans_to_bio_tags
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            tags = to_tags(sent.entities, len(sent))
            for c, s, p, t in zip(sent.chars, sent.seg_labels, sent.pos_tags, tags):
                fh.write(f"{c}\t{s}\t{p}\t{t}\n")
            fh.write("\n")


# ---------------------------------------------------------------------------
# vocabularies


class SymbolTable:
    """Dense bidirectional symbol <-> id map."""

    def __init__(self, symbols: list[str] | None = None):
        self._syms: list[str] = []
        self._ids: dict[str, int] = {}
        for s in symbols or []:
            self.add(s)

    def add(self, sym: str) -> int:
        if sym not in self._ids:
            self._ids[sym] = len(self._syms)
            self._syms.append(sym)
        return self._ids[sym]

    def id(self, sym: str, default: int | None = None) -> int:
        if sym in self._ids:
            return self._ids[sym]
        if default is not None:
            return default
        raise KeyError(sym)

    def sym(self, idx: int) -> str:
        return self._syms[idx]

    @property
    def symbols(self) -> list[str]:
        return list(self._syms)

    def __len__(self):
        return len(self._syms)

    def __contains__(self, sym):
        return sym in self._ids


class Vocab:
    """Symbol tables for characters, seg labels, POS, entity types, lexicon."""

    def __init__(self):
        self.chars = SymbolTable([PAD, UNK])
        self.segs = SymbolTable(list(SEG_LABELS))
        self.pos = SymbolTable([PAD, UNK])
        self.types = SymbolTable([NONE_LABEL])
        self.lex = SymbolTable([PAD, UNK])

    @classmethod
    def build(cls, sentences: list[Sentence],
              lexicon_words: list[str] | None = None) -> "Vocab":
        v = cls()
        for sent in sentences:
            for c in sent.chars:
                v.chars.add(c)
            for p in sent.pos_tags:
                v.pos.add(p)
            for _, _, etype in sorted(sent.entities):
                v.types.add(etype)
        for w in lexicon_words or []:
            v.lex.add(w)
        return v

    @property
    def none_id(self) -> int:
        return self.types.id(NONE_LABEL)

    def encode(self, sent: Sentence):
        unk_c = self.chars.id(UNK)
        unk_p = self.pos.id(UNK)
        sent.char_ids = np.array([self.chars.id(c, unk_c) for c in sent.chars], dtype=np.intp)
        sent.seg_ids = np.array([self.segs.id(s) for s in sent.seg_labels], dtype=np.intp)
        sent.pos_ids = np.array([self.pos.id(p, unk_p) for p in sent.pos_tags], dtype=np.intp)


# ---------------------------------------------------------------------------
# embedding files


def load_embeddings(path: str, table: SymbolTable, dim: int,
                    rng: np.random.Generator, reserved_rows: int = 0,
                    report=sys.stderr) -> tuple[np.ndarray, float]:
    """Initialize an embedding matrix from the text format "token v1 ... vd".

    An optional "count dim" header line is accepted. Rows for symbols not in
    the file are drawn uniform(-0.1, 0.1) from ``rng``. The first
    ``reserved_rows`` symbols (pad/unk) are excluded from the hit rate.
    Returns the matrix and the hit rate; a one-line coverage report goes to
    ``report``.
    """
    matrix = rng.uniform(-0.1, 0.1, size=(len(table), dim))
    hits = 0
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        lines = []
        if first.strip():
            parts = first.split()
            if not (len(parts) == 2 and all(p.lstrip("-").isdigit() for p in parts)):
                lines.append(first)
        for line in lines + fh.readlines():
            if not line.strip():
                continue
            parts = line.rstrip("\n").split()
            token, vals = parts[0], parts[1:]
            if len(vals) != dim:
                raise ConfigError(
                    f"embedding row for {token!r} has {len(vals)} values, expected {dim}")
            if token in table:
                matrix[table.id(token)] = [float(v) for v in vals]
                hits += 1
    countable = max(len(table) - reserved_rows, 1)
    rate = hits / countable
    if report is not None:
        print(f"embeddings {path}: {hits}/{countable} symbols covered "
              f"(hit rate {rate:.4f})", file=report)
    return matrix, rate
