"""Reverse-mode differentiation over dense float32 arrays.

Every forward operation appends a node to a Tape; nodes reference strictly
earlier nodes, so creation order is a topological order and the backward pass
is a single reverse sweep. Values and gradients are float32; scalar loss
nodes accumulate in float64.

Set KOOP_CHECK_FINITE=1 to validate every op output (off by default; the
trainer checks losses and gradients regardless).
"""

from __future__ import annotations

import os
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import Xoshiro256

F32 = np.float32

_CHECK_FINITE = os.environ.get("KOOP_CHECK_FINITE", "0") == "1"


class ShapeMismatch(ValueError):
    """Operand shapes do not conform; a configuration error."""


class UsageError(RuntimeError):
    """API misuse, e.g. backward on a node the tape does not own."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached a checked value."""


class Param:
    """Named parameter tensor. `constrained` marks weights that must stay
    elementwise nonnegative (re-projected after every optimizer step)."""

    __slots__ = ("name", "value", "constrained")

    def __init__(self, name: str, value: np.ndarray, constrained: bool = False):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=F32)
        self.constrained = constrained

    def __repr__(self):
        tag = ", constrained" if self.constrained else ""
        return f"Param({self.name!r}, shape={self.value.shape}{tag})"


class Node:
    __slots__ = ("idx", "op", "value", "parents", "bwd")

    def __init__(self, idx, op, value, parents, bwd):
        self.idx = idx
        self.op = op
        self.value = value
        self.parents = parents
        self.bwd = bwd

    def __repr__(self):
        shape = getattr(self.value, "shape", "scalar")
        return f"Node({self.idx}, {self.op}, {shape}, parents={self.parents})"


class Tape:
    """Ordered record of one forward computation."""

    __slots__ = ("nodes", "param_nodes")

    def __init__(self):
        self.nodes: list[Node] = []
        self.param_nodes: list[tuple[int, Param]] = []

    def _emit(self, value, parents: tuple[int, ...] = (), bwd: Optional[Callable] = None,
              op: str = "leaf") -> Node:
        if _CHECK_FINITE and isinstance(value, np.ndarray) and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite value produced by {op!r}")
        node = Node(len(self.nodes), op, value, parents, bwd)
        self.nodes.append(node)
        return node

    def leaf(self, array: np.ndarray) -> Node:
        """Constant input; gradients flow to it but are discarded."""
        return self._emit(np.asarray(array, dtype=F32))

    def param(self, p: Param) -> Node:
        node = self._emit(p.value, op=f"param:{p.name}")
        self.param_nodes.append((node.idx, p))
        return node


def _as2d(name: str, v: np.ndarray) -> None:
    if v.ndim != 2:
        raise ShapeMismatch(f"{name}: expected 2-D array, got shape {v.shape}")


def affine(t: Tape, x: Node, w: Node, b: Optional[Node] = None) -> Node:
    """out = x @ w (+ b). x: [B,I], w: [I,O], b: [O]."""
    xv, wv = x.value, w.value
    _as2d("affine input", xv)
    _as2d("affine weight", wv)
    if xv.shape[1] != wv.shape[0]:
        raise ShapeMismatch(f"affine: input width {xv.shape[1]} != weight rows {wv.shape[0]}")
    out = xv @ wv
    if b is not None:
        bv = b.value
        if bv.shape != (wv.shape[1],):
            raise ShapeMismatch(f"affine: bias shape {bv.shape} != ({wv.shape[1]},)")
        out += bv

    def bwd(g):
        gb = g.sum(axis=0) if b is not None else None
        return (g @ wv.T, xv.T @ g, gb)

    if b is None:
        return t._emit(out, (x.idx, w.idx), lambda g: (g @ wv.T, xv.T @ g),
                       op="matmul")
    return t._emit(out, (x.idx, w.idx, b.idx), bwd, op="affine")


def relu(t: Tape, x: Node) -> Node:
    out = np.maximum(x.value, 0)
    mask = x.value > 0
    return t._emit(out, (x.idx,), lambda g: (g * mask,), op="relu")


def softplus(t: Tape, x: Node) -> Node:
    """log(1 + e^x), computed as max(x,0) + log1p(e^-|x|) to avoid overflow."""
    xv = x.value
    e = np.exp(-np.abs(xv))
    out = np.maximum(xv, 0) + np.log1p(e)

    def bwd(g):
        # d/dx softplus = sigmoid(x) = 0.5 * (1 + tanh(x/2)); single-pass, f32
        s = np.tanh(xv * F32(0.5))
        s += F32(1.0)
        s *= F32(0.5)
        return (g * s,)

    return t._emit(out, (x.idx,), bwd, op="softplus")


def add(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"add: {a.value.shape} vs {b.value.shape}")
    return t._emit(a.value + b.value, (a.idx, b.idx), lambda g: (g, g), op="add")


def sub(t: Tape, a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"sub: {a.value.shape} vs {b.value.shape}")
    return t._emit(a.value - b.value, (a.idx, b.idx), lambda g: (g, -g), op="sub")


def concat_cols(t: Tape, a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.shape[0] != bv.shape[0]:
        raise ShapeMismatch(f"concat: row counts {av.shape[0]} vs {bv.shape[0]}")
    k = av.shape[1]
    out = np.concatenate([av, bv], axis=1)
    return t._emit(out, (a.idx, b.idx), lambda g: (g[:, :k], g[:, k:]),
                   op="concat")


def slice_cols(t: Tape, x: Node, lo: int, hi: int) -> Node:
    xv = x.value
    if not (0 <= lo <= hi <= xv.shape[1]):
        raise ShapeMismatch(f"slice [{lo}:{hi}] out of range for width {xv.shape[1]}")

    def bwd(g):
        gx = np.zeros_like(xv)
        gx[:, lo:hi] = g
        return (gx,)

    return t._emit(np.ascontiguousarray(xv[:, lo:hi]), (x.idx,), bwd, op="slice")


def abs_(t: Tape, x: Node) -> Node:
    xv = x.value
    return t._emit(np.abs(xv), (x.idx,), lambda g: (g * np.sign(xv),), op="abs")


def add_const(t: Tape, x: Node, c: float) -> Node:
    return t._emit(x.value + F32(c), (x.idx,), lambda g: (g,), op="add_const")


def sumsq(t: Tape, x: Node) -> Node:
    """Sum of squared entries as a float64 scalar node."""
    xv = x.value
    val = float(np.dot(xv.reshape(-1).astype(np.float64), xv.reshape(-1).astype(np.float64)))
    return t._emit(val, (x.idx,), lambda g: ((F32(2.0 * g) * xv),), op="sumsq")


def scalar_sum(t: Tape, terms: Sequence[tuple[Node, float]]) -> Node:
    """Weighted sum of scalar nodes, accumulated in float64."""
    val = 0.0
    for node, w in terms:
        if isinstance(node.value, np.ndarray):
            raise ShapeMismatch("scalar_sum expects scalar nodes")
        val += w * node.value
    parents = tuple(node.idx for node, _ in terms)
    weights = [w for _, w in terms]
    return t._emit(val, parents, lambda g: tuple(g * w for w in weights),
                   op="scalar_sum")


def backward(t: Tape, node: Node, seed=None, wrt: Sequence[Node] = ()):
    """Reverse sweep from `node`. Returns (param_grads, wrt_grads).

    param_grads maps parameter name -> float32 gradient array (zeros when the
    parameter does not influence `node`). Gradients sum across fan-out.
    """
    nodes = t.nodes
    if node.idx >= len(nodes) or nodes[node.idx] is not node:
        raise UsageError("backward: node does not belong to this tape")
    scalar_out = not isinstance(node.value, np.ndarray)
    if seed is None:
        if not scalar_out:
            raise UsageError("backward: array output requires an explicit seed gradient")
        seed = 1.0
    elif not scalar_out:
        seed = np.asarray(seed, dtype=F32)
        if seed.shape != node.value.shape:
            raise ShapeMismatch(f"seed shape {seed.shape} != output shape {node.value.shape}")

    grads: list = [None] * len(nodes)
    owned = [False] * len(nodes)
    grads[node.idx] = seed
    owned[node.idx] = True

    for i in range(node.idx, -1, -1):
        g = grads[i]
        nd = nodes[i]
        if g is None or nd.bwd is None:
            continue
        for pi, pg in zip(nd.parents, nd.bwd(g)):
            if pg is None:
                continue
            cur = grads[pi]
            if cur is None:
                grads[pi] = pg
            elif isinstance(cur, np.ndarray):
                if owned[pi]:
                    cur += pg
                else:
                    grads[pi] = cur + pg
                    owned[pi] = True
            else:
                grads[pi] = cur + pg

    param_grads = {}
    for idx, p in t.param_nodes:
        g = grads[idx]
        if g is None:
            g = np.zeros_like(p.value)
        elif p.name in param_grads:
            # one Param registered on the tape more than once
            g = param_grads[p.name] + g
        param_grads[p.name] = g
    wrt_grads = [grads[n.idx] for n in wrt]
    return param_grads, wrt_grads


class AdamState:
    """Adam moments keyed by parameter name; step starts at 0."""

    def __init__(self, params: dict[str, Param], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {name: np.zeros_like(p.value) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.value) for name, p in params.items()}


def adam_step(params: dict[str, Param], grads: dict[str, np.ndarray], state: AdamState,
              grad_clip: Optional[float] = None) -> None:
    """Standard Adam with bias correction, in place. Raises NonFiniteError on
    bad gradients so the caller can abort with its last good checkpoint."""
    names = sorted(params)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    if grad_clip is not None:
        total = 0.0
        for name in names:
            g = grads[name]
            total += float(np.dot(g.reshape(-1).astype(np.float64), g.reshape(-1).astype(np.float64)))
        norm = total ** 0.5
        if norm > grad_clip:
            scale = F32(grad_clip / norm)
            for name in names:
                grads[name] = grads[name] * scale

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = F32(1.0 - b1 ** state.step)
    c2 = F32(1.0 - b2 ** state.step)
    lr, eps = F32(state.lr), F32(state.eps)
    for name in names:
        p, g = params[name], grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= F32(b1)
        m += F32(1.0 - b1) * g
        v *= F32(b2)
        v += F32(1.0 - b2) * (g * g)
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def project_nonnegative(params: dict[str, Param]) -> None:
    """Clamp constrained weights to [0, inf), in place."""
    for p in params.values():
        if p.constrained:
            np.maximum(p.value, 0, out=p.value)


def uniform_array(rng: Xoshiro256, shape: tuple[int, ...], lo: float, hi: float) -> np.ndarray:
    """Fill row-major from the generator; deterministic across platforms."""
    n = 1
    for d in shape:
        n *= d
    flat = np.empty(n, dtype=np.float64)
    for i in range(n):
        flat[i] = rng.uniform(lo, hi)
    return flat.reshape(shape).astype(F32)
