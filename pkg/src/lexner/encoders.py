"""Character-level context encoders and fixed-size fragment encoders.

Every candidate span of length at most ``m`` gets one fixed-size vector.
The three fragment encoders (bag-of-words mean, forgetting encoding,
bidirectional LSTM) all enumerate spans incrementally, reusing the state
of shorter spans to build longer ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ConfigError, Tensor

Span = tuple[int, int]


def fragment_count(n: int, m: int) -> int:
    """Number of spans of length <= m in a sentence of n characters."""
    m = min(m, n)
    return m * (2 * n - m + 1) // 2


def enumerate_fragments(n: int, m: int) -> list[Span]:
    """All (i, j) with 0 <= i <= j < n and j - i + 1 <= m, ordered by start."""
    return [(i, j) for i in range(n) for j in range(i, min(i + m, n))]


# ---------------------------------------------------------------------------
# character features


def char_feature_vectors(char_ids, seg_ids, pos_ids, emb_char: Tensor,
                         emb_seg: Tensor, emb_pos: Tensor,
                         dropout_rate: float = 0.0,
                         rng: np.random.Generator | None = None,
                         training: bool = False) -> list[Tensor]:
    """Per-character vector: char ++ soft-word ++ POS embeddings, with
    dropout applied at this embedding layer during training."""
    out = []
    for c, s, p in zip(char_ids, seg_ids, pos_ids):
        w = ad.concat([ad.lookup(emb_char, c), ad.lookup(emb_seg, s),
                       ad.lookup(emb_pos, p)])
        out.append(ad.dropout(w, dropout_rate, rng, training))
    return out


# ---------------------------------------------------------------------------
# LSTM machinery


@dataclass
class LSTMCell:
    """Gate weights laid out as 4h rows in i, f, g, o order."""

    wx: Tensor
    wh: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.b.shape[0] // 4

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hid = self.hidden
        pre = ad.add(ad.add(ad.matvec(self.wx, x), ad.matvec(self.wh, h)), self.b)
        i = ad.sigmoid(ad.vslice(pre, 0, hid))
        f = ad.sigmoid(ad.vslice(pre, hid, 2 * hid))
        g = ad.tanh(ad.vslice(pre, 2 * hid, 3 * hid))
        o = ad.sigmoid(ad.vslice(pre, 3 * hid, 4 * hid))
        c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
        h_new = ad.mul(o, ad.tanh(c_new))
        return h_new, c_new


def lstm_init(d_in: int, hidden: int, rng: np.random.Generator) -> LSTMCell:
    bound = 1.0 / np.sqrt(hidden)
    return LSTMCell(
        wx=ad.parameter(rng.uniform(-bound, bound, (4 * hidden, d_in))),
        wh=ad.parameter(rng.uniform(-bound, bound, (4 * hidden, hidden))),
        b=ad.parameter(np.zeros(4 * hidden)),
    )


def lstm_run(xs: list[Tensor], cell: LSTMCell, reverse: bool = False) -> list[Tensor]:
    """Hidden states aligned with ``xs``; ``reverse`` runs right to left."""
    h = ad.constant(np.zeros(cell.hidden))
    c = ad.constant(np.zeros(cell.hidden))
    states: list[Tensor] = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for idx in order:
        h, c = cell.step(xs[idx], h, c)
        states[idx] = h
    return states


# ---------------------------------------------------------------------------
# character encoders


def encode_characters(w: list[Tensor], mode: str,
                      layers: list[tuple[LSTMCell, LSTMCell]] | None = None
                      ) -> list[Tensor]:
    """Context-aware character vectors.

    ``baseline`` returns the embedding vectors unchanged. ``birnn`` stacks
    bidirectional LSTM layers (forward cell, backward cell per layer) and
    concatenates the two top-layer states per position.
    """
    if mode == "baseline":
        return w
    if mode != "birnn":
        raise ConfigError(f"unknown character encoder {mode!r}")
    if not layers:
        raise ConfigError("birnn character encoder requires LSTM layers")
    xs = w
    for fwd, bwd in layers:
        f_states = lstm_run(xs, fwd)
        b_states = lstm_run(xs, bwd, reverse=True)
        xs = [ad.concat([f, b]) for f, b in zip(f_states, b_states)]
    return xs


# ---------------------------------------------------------------------------
# fragment encoders


def encode_fragments_bow(t: list[Tensor], spans: list[Span]) -> dict[Span, Tensor]:
    """Mean of the span's character vectors via shared running prefix sums."""
    n = len(t)
    prefix: list[Tensor] = [None] * (n + 1)
    prefix[0] = ad.constant(np.zeros(t[0].shape[0]))
    for k in range(n):
        prefix[k + 1] = ad.add(prefix[k], t[k])
    out = {}
    for i, j in spans:
        length = j - i + 1
        if length == 1:
            out[(i, j)] = t[i]
        else:
            out[(i, j)] = ad.scale(ad.sub(prefix[j + 1], prefix[i]), 1.0 / length)
    return out


def encode_fragments_fofe(t: list[Tensor], spans: list[Span],
                          alpha: float) -> dict[Span, Tensor]:
    """Forgetting encoding z_k = alpha * z_{k-1} + t_k; the span (i, j)
    reuses the chain state built for (i, j-1)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"forgetting factor must lie in (0, 1), got {alpha}")
    n = len(t)
    max_end: dict[int, int] = {}
    for i, j in spans:
        max_end[i] = max(max_end.get(i, i), j)
    chains: dict[int, list[Tensor]] = {}
    for i, far in max_end.items():
        z = t[i]
        chain = [z]
        for k in range(i + 1, far + 1):
            z = ad.add(ad.scale(z, alpha), t[k])
            chain.append(z)
        chains[i] = chain
    return {(i, j): chains[i][j - i] for i, j in spans}


def encode_fragments_birnn(t: list[Tensor], spans: list[Span], fwd: LSTMCell,
                           bwd: LSTMCell) -> dict[Span, Tensor]:
    """Final forward state ++ final backward state of a span-local BiLSTM.

    Forward chains are shared across spans with a common start; backward
    chains across spans with a common end.
    """
    starts: dict[int, int] = {}
    ends: dict[int, int] = {}
    for i, j in spans:
        starts[i] = max(starts.get(i, i), j)
        ends[j] = min(ends.get(j, j), i)
    zeros = ad.constant(np.zeros(fwd.hidden))
    fchain: dict[int, list[Tensor]] = {}
    for i, far in starts.items():
        h, c = zeros, zeros
        states = []
        for k in range(i, far + 1):
            h, c = fwd.step(t[k], h, c)
            states.append(h)
        fchain[i] = states
    bzeros = ad.constant(np.zeros(bwd.hidden))
    bchain: dict[int, list[Tensor]] = {}
    for j, near in ends.items():
        h, c = bzeros, bzeros
        states = []
        for k in range(j, near - 1, -1):
            h, c = bwd.step(t[k], h, c)
            states.append(h)
        bchain[j] = states
    return {(i, j): ad.concat([fchain[i][j - i], bchain[j][j - i]])
            for i, j in spans}
