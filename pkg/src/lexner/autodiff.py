"""Tape-based reverse-mode automatic differentiation on dense float64 arrays.

The tape is define-by-run: operations execute eagerly and, when a tape is
active and any input is tracked, push a backward closure. Calling
``Tape.backward`` replays the closures in reverse execution order.
"""
from __future__ import annotations

import math

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ValueError):
    """A configuration value is outside its documented domain."""


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """Dense float64 array with an optional same-shape gradient buffer.

    ``touched_rows`` records which rows of a 2-D parameter received gradient
    during the current step; the sparse Adam mode consumes it.
    """

    __slots__ = ("values", "grad", "tracked", "touched_rows")

    def __init__(self, values, tracked: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tracked = tracked
        self.touched_rows: set[int] = set()

    @property
    def shape(self):
        return self.values.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        return self.grad

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)
        self.touched_rows.clear()

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, tracked={self.tracked})"


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), tracked=True)


def constant(values) -> Tensor:
    return Tensor(values)


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self):
        self._records: list = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def record(self, backward):
        self._records.append(backward)

    def backward(self, out: Tensor):
        if out.values.ndim != 0:
            raise ShapeError(f"backward requires a scalar output, got shape {out.shape}")
        out.ensure_grad()
        out.grad += 1.0
        for fn in reversed(self._records):
            fn()


def _begin(out_values, *inputs) -> tuple[Tensor, Tape | None]:
    """Create the output tensor and decide whether to record a backward."""
    out = Tensor(out_values)
    tape = active_tape()
    if tape is None or not any(t.tracked for t in inputs):
        return out, None
    out.tracked = True
    out.ensure_grad()
    for t in inputs:
        if t.tracked:
            t.ensure_grad()
    return out, tape


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out, tape = _begin(a.values + b.values, a, b)
    if tape:
        def backward():
            if a.tracked:
                a.grad += out.grad
            if b.tracked:
                b.grad += out.grad
        tape.record(backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    out, tape = _begin(a.values - b.values, a, b)
    if tape:
        def backward():
            if a.tracked:
                a.grad += out.grad
            if b.tracked:
                b.grad -= out.grad
        tape.record(backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out, tape = _begin(a.values * b.values, a, b)
    if tape:
        av, bv = a.values.copy(), b.values.copy()
        def backward():
            if a.tracked:
                a.grad += out.grad * bv
            if b.tracked:
                b.grad += out.grad * av
        tape.record(backward)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    out, tape = _begin(x.values * c, x)
    if tape:
        def backward():
            x.grad += out.grad * c
        tape.record(backward)
    return out


def tanh(x: Tensor) -> Tensor:
    out, tape = _begin(np.tanh(x.values), x)
    if tape:
        ov = out.values
        def backward():
            x.grad += out.grad * (1.0 - ov * ov)
        tape.record(backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    out, tape = _begin(1.0 / (1.0 + np.exp(-x.values)), x)
    if tape:
        ov = out.values
        def backward():
            x.grad += out.grad * ov * (1.0 - ov)
        tape.record(backward)
    return out


def exp(x: Tensor) -> Tensor:
    out, tape = _begin(np.exp(x.values), x)
    if tape:
        ov = out.values
        def backward():
            x.grad += out.grad * ov
        tape.record(backward)
    return out


def log(x: Tensor) -> Tensor:
    out, tape = _begin(np.log(x.values), x)
    if tape:
        xv = x.values.copy()
        def backward():
            x.grad += out.grad / xv
        tape.record(backward)
    return out


def sum_all(x: Tensor) -> Tensor:
    out, tape = _begin(x.values.sum(), x)
    if tape:
        def backward():
            x.grad += out.grad
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out, tape = _begin(a.values @ b.values, a, b)
    if tape:
        av, bv = a.values.copy(), b.values.copy()
        def backward():
            if a.tracked:
                a.grad += out.grad @ bv.T
            if b.tracked:
                b.grad += av.T @ out.grad
        tape.record(backward)
    return out


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.values.ndim != 2 or x.values.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {a.shape} and {x.shape}")
    out, tape = _begin(a.values @ x.values, a, x)
    if tape:
        av, xv = a.values.copy(), x.values.copy()
        def backward():
            if a.tracked:
                a.grad += np.outer(out.grad, xv)
            if x.tracked:
                x.grad += av.T @ out.grad
        tape.record(backward)
    return out


def vecmat(x: Tensor, a: Tensor) -> Tensor:
    if a.values.ndim != 2 or x.values.ndim != 1 or x.shape[0] != a.shape[0]:
        raise ShapeError(f"vecmat: incompatible shapes {x.shape} and {a.shape}")
    out, tape = _begin(x.values @ a.values, x, a)
    if tape:
        av, xv = a.values.copy(), x.values.copy()
        def backward():
            if x.tracked:
                x.grad += av @ out.grad
            if a.tracked:
                a.grad += np.outer(xv, out.grad)
        tape.record(backward)
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Row-batched affine map: (n, d_in) @ (d_out, d_in)^T + (d_out,)."""
    if x.values.ndim != 2 or w.values.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.shape} and {w.shape}")
    if b.values.ndim != 1 or b.shape[0] != w.shape[0]:
        raise ShapeError(f"linear: bias shape {b.shape} does not match {w.shape}")
    out, tape = _begin(x.values @ w.values.T + b.values, x, w, b)
    if tape:
        xv, wv = x.values.copy(), w.values.copy()
        def backward():
            if x.tracked:
                x.grad += out.grad @ wv
            if w.tracked:
                w.grad += out.grad.T @ xv
            if b.tracked:
                b.grad += out.grad.sum(axis=0)
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# structural ops


def concat(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty part list")
    for p in parts:
        if p.values.ndim != 1:
            raise ShapeError(f"concat: expected vectors, got shape {p.shape}")
    out, tape = _begin(np.concatenate([p.values for p in parts]), *parts)
    if tape:
        offsets = np.cumsum([0] + [p.shape[0] for p in parts])
        def backward():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.tracked:
                    p.grad += out.grad[lo:hi]
        tape.record(backward)
    return out


def vslice(x: Tensor, start: int, stop: int) -> Tensor:
    if x.values.ndim != 1:
        raise ShapeError(f"vslice: expected a vector, got shape {x.shape}")
    out, tape = _begin(x.values[start:stop].copy(), x)
    if tape:
        def backward():
            x.grad[start:stop] += out.grad
        tape.record(backward)
    return out


def stack_rows(rows: list[Tensor]) -> Tensor:
    if not rows:
        raise ShapeError("stack_rows: empty row list")
    out, tape = _begin(np.stack([r.values for r in rows]), *rows)
    if tape:
        def backward():
            for i, r in enumerate(rows):
                if r.tracked:
                    r.grad += out.grad[i]
        tape.record(backward)
    return out


def hconcat(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"hconcat: incompatible shapes {a.shape} and {b.shape}")
    out, tape = _begin(np.concatenate([a.values, b.values], axis=1), a, b)
    if tape:
        split = a.shape[1]
        def backward():
            if a.tracked:
                a.grad += out.grad[:, :split]
            if b.tracked:
                b.grad += out.grad[:, split:]
        tape.record(backward)
    return out


def vconcat(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"vconcat: incompatible shapes {a.shape} and {b.shape}")
    out, tape = _begin(np.concatenate([a.values, b.values], axis=0), a, b)
    if tape:
        split = a.shape[0]
        def backward():
            if a.tracked:
                a.grad += out.grad[:split]
            if b.tracked:
                b.grad += out.grad[split:]
        tape.record(backward)
    return out


def lookup(table: Tensor, index: int) -> Tensor:
    """Embedding row fetch; gradient scatters back into the table row."""
    out, tape = _begin(table.values[index].copy(), table)
    if tape:
        def backward():
            table.grad[index] += out.grad
            table.touched_rows.add(int(index))
        tape.record(backward)
    return out


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Batched embedding fetch. Duplicate indices accumulate on backward."""
    idx = np.asarray(indices, dtype=np.intp)
    out, tape = _begin(table.values[idx], table)
    if tape:
        def backward():
            np.add.at(table.grad, idx, out.grad)
            table.touched_rows.update(int(i) for i in idx)
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor) -> Tensor:
    """Numerically stable softmax of a vector (max subtraction)."""
    if x.values.ndim != 1 or x.shape[0] == 0:
        raise ShapeError(f"softmax: expected a nonempty vector, got shape {x.shape}")
    shifted = x.values - x.values.max()
    e = np.exp(shifted)
    out, tape = _begin(e / e.sum(), x)
    if tape:
        p = out.values
        def backward():
            g = out.grad
            x.grad += p * (g - np.dot(p, g))
        tape.record(backward)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    if x.values.ndim != 2 or x.shape[1] == 0:
        raise ShapeError(f"softmax_rows: expected a nonempty matrix, got shape {x.shape}")
    shifted = x.values - x.values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out, tape = _begin(e / e.sum(axis=1, keepdims=True), x)
    if tape:
        p = out.values
        def backward():
            g = out.grad
            x.grad += p * (g - (p * g).sum(axis=1, keepdims=True))
        tape.record(backward)
    return out


# ---------------------------------------------------------------------------
# regularization / loss


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires a seeded generator")
    mask = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    out, tape = _begin(x.values * mask, x)
    if tape:
        def backward():
            x.grad += out.grad * mask
        tape.record(backward)
    return out


_PT_FLOOR = 1e-12


def focal_loss_rows(probs: Tensor, targets: np.ndarray, alpha: Tensor,
                    gamma: float) -> Tensor:
    """Summed focal loss -a_t (1-p_t)^g log(p_t) over rows of a prob matrix.

    ``alpha`` is a per-class positive weight vector; ``gamma`` >= 0 is fixed.
    With gamma = 0 and unit alpha this is exactly summed cross-entropy.
    p_t is clamped to [1e-12, 1]; gradient is cut where the clamp binds.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be nonnegative, got {gamma}")
    tgt = np.asarray(targets, dtype=np.intp)
    if probs.values.ndim != 2 or tgt.shape[0] != probs.shape[0]:
        raise ShapeError(f"focal_loss_rows: probs {probs.shape} vs {tgt.shape[0]} targets")
    if tgt.size and (tgt.min() < 0 or tgt.max() >= probs.shape[1]):
        raise ValueError("focal_loss_rows: target class out of range")
    rows = np.arange(tgt.shape[0])
    pt_raw = probs.values[rows, tgt]
    pt = np.clip(pt_raw, _PT_FLOOR, 1.0)
    a_t = alpha.values[tgt]
    one_m = 1.0 - pt
    pow_g = one_m ** gamma
    logpt = np.log(pt)
    losses = -a_t * pow_g * logpt
    out, tape = _begin(losses.sum(), probs, alpha)
    if tape:
        def backward():
            g = float(out.grad)
            if gamma > 0.0:
                safe = np.zeros_like(one_m)
                pos = one_m > 0.0
                safe[pos] = one_m[pos] ** (gamma - 1.0)
                # limit of (1-p)^(g-1) log p at p -> 1 is 0 for g > 0
                dpt = a_t * (gamma * safe * logpt - pow_g / pt)
            else:
                dpt = -a_t / pt
            clamp_open = (pt_raw >= _PT_FLOOR) & (pt_raw <= 1.0)
            if probs.tracked:
                probs.grad[rows, tgt] += g * dpt * clamp_open
            if alpha.tracked:
                np.add.at(alpha.grad, tgt, g * (-pow_g * logpt))
        tape.record(backward)
    return out


def focal_loss(probs: Tensor, true_class: int, alpha: Tensor, gamma: float) -> Tensor:
    """Focal loss of a single probability vector against ``true_class``."""
    if probs.values.ndim != 1:
        raise ShapeError(f"focal_loss: expected a probability vector, got {probs.shape}")
    if not 0 <= true_class < probs.shape[0]:
        raise ValueError(f"focal_loss: class {true_class} out of range for {probs.shape[0]}")
    return focal_loss_rows(stack_rows([probs]), np.array([true_class]), alpha, gamma)
