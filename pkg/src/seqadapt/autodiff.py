"""Minimal reverse-mode autodiff core.

Define-by-run: ops executed inside a `Graph` context record themselves on a
tape; `Graph.backward` replays the tape in reverse. Outside a context the same
ops run forward-only, which is how inference and finite-difference probes are
evaluated. Everything is float64; tensors are treated as immutable once an op
has consumed them.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

LAYER_NORM_EPS = 1e-5

_node_ids = itertools.count()
_current_graph: "Graph | None" = None


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested op."""


class Tensor:
    """Dense float64 array plus an optional gradient buffer.

    `grad` is filled lazily by `Graph.backward`; `None` means zero.
    """

    __slots__ = ("values", "grad", "node_id")

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, id={self.node_id})"


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out: Tensor, parents: tuple[Tensor, ...],
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]):
        self.out = out
        self.parents = parents
        self.backward = backward


class Graph:
    """Tape of recorded ops, in execution (hence topological) order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._prev: Graph | None = None

    def __enter__(self) -> "Graph":
        global _current_graph
        self._prev = _current_graph
        _current_graph = self
        return self

    def __exit__(self, *exc):
        global _current_graph
        _current_graph = self._prev
        return False

    def tensors(self) -> set[Tensor]:
        seen: set[Tensor] = set()
        for node in self.nodes:
            seen.add(node.out)
            seen.update(node.parents)
        return seen

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Propagate from a scalar `root` back through the tape.

        Returns this pass's gradient contribution for every tensor reached;
        the same contributions are also accumulated into each tensor's `grad`
        buffer, so calling backward twice without `reset` doubles the stored
        gradients.
        """
        if root.values.size != 1:
            raise ShapeError(f"backward root must be scalar, got {root.shape}")
        if not np.isfinite(root.values).all():
            raise FloatingPointError("backward from non-finite root")
        contrib: dict[Tensor, np.ndarray] = {root: np.ones_like(root.values)}
        for node in reversed(self.nodes):
            out_grad = contrib.get(node.out)
            if out_grad is None:
                continue
            parent_grads = node.backward(out_grad)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                acc = contrib.get(parent)
                contrib[parent] = pg if acc is None else acc + pg
        for t, g in contrib.items():
            t.grad = g.copy() if t.grad is None else t.grad + g
        return contrib

    def reset(self):
        """Clear accumulated gradients on every tensor the tape touched."""
        for t in self.tensors():
            t.grad = None


def _record(out: Tensor, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _current_graph is not None:
        _current_graph.nodes.append(_Node(out, parents, backward))
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(values) -> Tensor:
    return Tensor(values)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Supports 1D/2D/3D `a` against 2D weights and the
    batched 3D×3D case used by attention."""
    av, bv = a.values, b.values
    if av.ndim not in (1, 2, 3) or bv.ndim not in (2, 3):
        raise ShapeError(f"matmul rank unsupported: {av.shape} @ {bv.shape}")
    if bv.ndim == 3 and av.ndim != 3:
        raise ShapeError(f"matmul rank unsupported: {av.shape} @ {bv.shape}")
    if av.shape[-1] != bv.shape[-2] or (
            av.ndim == 3 and bv.ndim == 3 and av.shape[0] != bv.shape[0]):
        raise ShapeError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out = Tensor(av @ bv)

    def backward(g):
        if bv.ndim == 2:
            if av.ndim == 1:
                da = g @ bv.T
                db = np.outer(av, g)
            elif av.ndim == 2:
                da = g @ bv.T
                db = av.T @ g
            else:
                da = g @ bv.T
                db = np.tensordot(av, g, axes=([0, 1], [0, 1]))
        else:
            da = g @ bv.swapaxes(-1, -2)
            db = av.swapaxes(-1, -2) @ g
        return da, db

    return _record(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; `b` may broadcast across leading axes of `a`
    (bias vectors, positional tables)."""
    av, bv = a.values, b.values
    if av.shape != bv.shape and av.shape[av.ndim - bv.ndim:] != bv.shape:
        raise ShapeError(f"add shape mismatch: {av.shape} + {bv.shape}")
    out = Tensor(av + bv)
    lead = av.ndim - bv.ndim

    def backward(g):
        gb = g.sum(axis=tuple(range(lead))) if lead else g
        return g, gb

    return _record(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.shape != bv.shape:
        raise ShapeError(f"mul shape mismatch: {av.shape} * {bv.shape}")
    out = Tensor(av * bv)
    return _record(out, (a, b), lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.values * c)
    return _record(out, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.values.sum())
    xv = x.values
    return _record(out, (x,), lambda g: (np.full_like(xv, float(g)),))


def relu(x: Tensor) -> Tensor:
    """max(0, x) with subgradient 0 at the kink."""
    mask = x.values > 0.0
    out = Tensor(np.where(mask, x.values, 0.0))
    return _record(out, (x,), lambda g: (g * mask,))


def transpose_last(x: Tensor) -> Tensor:
    if x.values.ndim < 2:
        raise ShapeError(f"transpose_last needs rank >= 2, got {x.shape}")
    out = Tensor(x.values.swapaxes(-1, -2).copy())
    return _record(out, (x,), lambda g: (g.swapaxes(-1, -2),))


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.values[..., start:stop].copy())
    xv = x.values

    def backward(g):
        gx = np.zeros_like(xv)
        gx[..., start:stop] = g
        return (gx,)

    return _record(out, (x,), backward)


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_last of nothing")
    out = Tensor(np.concatenate([p.values for p in parts], axis=-1))
    widths = [p.values.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]]
                     for i in range(len(parts)))

    return _record(out, tuple(parts), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted for stability. Rows of the
    result are non-negative and sum to 1."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to mean 0, variance 1 (eps floor), then apply
    the learned affine."""
    d = x.values.shape[-1]
    if gain.values.shape != (d,) or bias.values.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gain.shape}/{bias.shape} "
            f"do not match feature width {d}")
    mu = x.values.mean(axis=-1, keepdims=True)
    centered = x.values - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv
    out = Tensor(xhat * gain.values + bias.values)
    gv = gain.values

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gv
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record(out, (x, gain, bias), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b, bias broadcast across leading axes."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-softmax likelihood of integer `targets`."""
    t = np.asarray(targets)
    lv = logits.values
    if lv.ndim != 2:
        raise ShapeError(f"cross_entropy expects 2D logits, got {lv.shape}")
    m, c = lv.shape
    if t.shape != (m,):
        raise ShapeError(f"targets shape {t.shape} does not match batch {m}")
    if t.min(initial=0) < 0 or t.max(initial=0) >= c:
        bad = t[(t < 0) | (t >= c)][0]
        raise IndexError(f"target class {bad} out of range [0, {c})")
    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = Tensor(-logp[np.arange(m), t].mean())
    probs = np.exp(logp)

    def backward(g):
        dl = probs.copy()
        dl[np.arange(m), t] -= 1.0
        return (dl * (float(g) / m),)

    return _record(out, (logits,), backward)


def max_over_axis(x: Tensor, axis: int = -2) -> tuple[Tensor, np.ndarray]:
    """Maximum along `axis` plus argmax indices; gradient flows only to the
    argmax positions, ties broken toward the lowest index."""
    xv = x.values
    if xv.shape[axis] < 1:
        raise ShapeError(f"max over empty axis {axis} of shape {xv.shape}")
    idx = np.argmax(xv, axis=axis)
    values = np.take_along_axis(xv, np.expand_dims(idx, axis), axis=axis)
    out = Tensor(np.squeeze(values, axis=axis))

    def backward(g):
        gx = np.zeros_like(xv)
        np.put_along_axis(gx, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _record(out, (x,), backward), idx


# ---------------------------------------------------------------------------
# finite-difference harness


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               h: float = 1e-5) -> float:
    """Compare the recorded gradient of scalar `f` at `x` against central
    finite differences, coordinate by coordinate.

    Returns the max relative error, with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    with Graph() as g:
        out = f(x)
    if not np.isfinite(out.values).all():
        raise FloatingPointError("grad_check: f(x) is not finite")
    analytic = g.backward(out).get(x)
    if analytic is None:
        analytic = np.zeros_like(x.values)

    flat = x.values.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(x).item()
        flat[i] = orig - h
        down = f(x).item()
        flat[i] = orig
        numeric[i] = (up - down) / (2.0 * h)

    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom))
