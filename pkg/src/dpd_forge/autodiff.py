"""Reverse-mode differentiation over numpy arrays.

A :class:`Node` records its value, the nodes it was computed from and a
closure mapping the upstream gradient to one gradient per parent.
:func:`backward` walks the recorded graph in reverse topological order.

Besides elementwise primitives the module provides fused sequence ops
(:func:`gru_sequence`, :func:`lstm_sequence`) whose backward closures run
BPTT directly; these keep desk-scale training tractable in pure numpy.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_AMP_EPS = 1e-12


class Node:
    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "_backward", "name")

    def __init__(self, value, parents: Sequence["Node"] = (), op: str = "leaf",
                 backward_fn: Callable | None = None, requires_grad: bool | None = None,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.op = op
        self._backward = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Node<{self.op}{label} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, as_node(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_node(other))

    def __rsub__(self, other):
        return sub(as_node(other), self)

    def __mul__(self, other):
        return mul(self, as_node(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def constant(x) -> Node:
    return Node(x, requires_grad=False, op="const")


def parameter(x, name: str | None = None) -> Node:
    return Node(np.array(x, dtype=np.float64), requires_grad=True, op="param", name=name)


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        s = state.get(key)
        if s == 2:
            continue
        if s == 1:
            raise ValueError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node.parents:
            ps = state.get(id(p))
            if ps == 1:
                raise ValueError("cycle detected in computation graph")
            if ps is None and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node upstream of ``loss`` that requires it.

    Gradients accumulate, so parameter leaves must be zeroed between steps.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        if node.parents:
            node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node.parents, grads):
            if g is None or not p.requires_grad:
                continue
            g = _unbroadcast(g, p.value.shape)
            p.grad = g.copy() if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# --- elementwise and linear-algebra primitives ------------------------------

def add(a: Node, b: Node) -> Node:
    return Node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    return Node(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return Node(av * bv, (a, b), "mul", lambda g: (g * bv, g * av))


def square(a: Node) -> Node:
    av = a.value
    return Node(av * av, (a,), "square", lambda g: (2.0 * av * g,))


def sigmoid(a: Node) -> Node:
    s = _sigmoid(a.value)
    return Node(s, (a,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return Node(t, (a,), "tanh", lambda g: (g * (1.0 - t * t),))


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return Node(av @ bv, (a, b), "matmul", bw)


def linear(x: Node, weight: Node, bias: Node | None = None) -> Node:
    """``x @ weight.T + bias`` over the last axis; ``weight`` is (out, in)."""
    xv, wv = x.value, weight.value
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.value

    def bw(g):
        gx = g @ wv
        gw = g.reshape(-1, g.shape[-1]).T @ xv.reshape(-1, xv.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Node(out, parents, "linear", bw)


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    vals = [n.value for n in nodes]
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Node(np.concatenate(vals, axis=axis), tuple(nodes), "concat", bw)


def take_last(a: Node, idx) -> Node:
    """Index the last axis (an int, slice or index list)."""
    av = a.value
    out = av[..., idx]

    def bw(g):
        full = np.zeros_like(av)
        full[..., idx] += g
        return (full,)

    return Node(out, (a,), "take", bw)


def total(a: Node) -> Node:
    shape = a.value.shape
    return Node(np.sum(a.value), (a,), "sum", lambda g: (np.broadcast_to(g, shape),))


def mean(a: Node) -> Node:
    n = a.value.size
    shape = a.value.shape
    return Node(np.mean(a.value), (a,), "mean", lambda g: (np.broadcast_to(g / n, shape),))


def mse_loss(pred: Node, target) -> Node:
    """Mean squared error over batch, time and both I/Q channels."""
    tv = target.value if isinstance(target, Node) else np.asarray(target, dtype=np.float64)
    if pred.value.shape != tv.shape:
        raise ValueError(f"shape mismatch: {pred.value.shape} vs {tv.shape}")
    diff = pred.value - tv
    n = diff.size

    def bw(g):
        gp = g * 2.0 * diff / n
        return (gp, -gp)

    parents = (pred, target) if isinstance(target, Node) else (pred, constant(tv))
    return Node(np.mean(diff * diff), parents, "mse", bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- feature extraction -------------------------------------------------------

def fex_features(iq: np.ndarray) -> np.ndarray:
    """(..., 2) -> (..., 6) features ``[i, q, |x|, |x|^3, sin, cos]``."""
    i, q = iq[..., 0], iq[..., 1]
    amp = np.hypot(i, q)
    ok = amp >= _AMP_EPS
    safe = np.where(ok, amp, 1.0)
    sin = np.where(ok, q / safe, 0.0)
    cos = np.where(ok, i / safe, 0.0)
    return np.stack([i, q, amp, amp ** 3, sin, cos], axis=-1)


def fex(x: Node) -> Node:
    xv = x.value
    feats = fex_features(xv)

    def bw(g):
        i, q = xv[..., 0], xv[..., 1]
        amp = feats[..., 2]
        ok = amp >= _AMP_EPS
        safe = np.where(ok, amp, 1.0)
        inv = np.where(ok, 1.0 / safe, 0.0)
        inv3 = inv ** 3
        # d amp / d(i, q) = (i, q)/amp ; d amp^3 = 3 amp^2 d amp
        g_amp = g[..., 2] + 3.0 * amp * amp * g[..., 3]
        gi = g[..., 0] + g_amp * i * inv
        gq = g[..., 1] + g_amp * q * inv
        # sin = q/amp, cos = i/amp
        gi += g[..., 4] * (-i * q * inv3) + g[..., 5] * (q * q * inv3)
        gq += g[..., 4] * (i * i * inv3) + g[..., 5] * (-i * q * inv3)
        return (np.stack([gi, gq], axis=-1),)

    return Node(feats, (x,), "fex", bw)


# --- fused recurrent layers ---------------------------------------------------

def gru_sequence(x: Node, w_ih: Node, w_hh: Node, b_ih: Node, b_hh: Node) -> Node:
    """Run a GRU over ``x`` of shape (B, T, D) from a zero state; returns (B, T, H).

    Gate blocks are ordered (z, r, n) along the first weight axis:
    ``z = s(Wz x + bz + Uz h + cz)``, ``r`` likewise,
    ``n = tanh(Wn x + bn + r * (Un h + cn))``, ``h' = (1 - z) n + z h``.
    """
    xv, W, U, bi, bh = x.value, w_ih.value, w_hh.value, b_ih.value, b_hh.value
    B, T, _ = xv.shape
    H = U.shape[1]
    ax = xv @ W.T + bi  # (B, T, 3H)
    hs = np.zeros((B, T + 1, H))
    zs = np.empty((B, T, H))
    rs = np.empty((B, T, H))
    ns = np.empty((B, T, H))
    ahn = np.empty((B, T, H))
    h = hs[:, 0]
    for t in range(T):
        ah = h @ U.T + bh
        a = ax[:, t]
        z = _sigmoid(a[:, :H] + ah[:, :H])
        r = _sigmoid(a[:, H:2 * H] + ah[:, H:2 * H])
        n = np.tanh(a[:, 2 * H:] + r * ah[:, 2 * H:])
        h = (1.0 - z) * n + z * h
        zs[:, t], rs[:, t], ns[:, t], ahn[:, t] = z, r, n, ah[:, 2 * H:]
        hs[:, t + 1] = h

    def bw(g):
        d_ax = np.empty((B, T, 3 * H))
        d_ah = np.empty((B, T, 3 * H))
        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + g[:, t]
            z, r, n, h_prev = zs[:, t], rs[:, t], ns[:, t], hs[:, t]
            dn = dh * (1.0 - z) * (1.0 - n * n)
            dz = dh * (h_prev - n) * z * (1.0 - z)
            dr = dn * ahn[:, t] * r * (1.0 - r)
            d_ax[:, t, :H] = dz
            d_ax[:, t, H:2 * H] = dr
            d_ax[:, t, 2 * H:] = dn
            d_ah[:, t, :H] = dz
            d_ah[:, t, H:2 * H] = dr
            d_ah[:, t, 2 * H:] = dn * r
            dh = dh * z + d_ah[:, t] @ U
        flat_ax = d_ax.reshape(-1, 3 * H)
        flat_ah = d_ah.reshape(-1, 3 * H)
        gx = d_ax @ W
        gW = flat_ax.T @ xv.reshape(-1, xv.shape[-1])
        gU = flat_ah.T @ hs[:, :-1].reshape(-1, H)
        return gx, gW, gU, flat_ax.sum(axis=0), flat_ah.sum(axis=0)

    return Node(hs[:, 1:], (x, w_ih, w_hh, b_ih, b_hh), "gru_seq", bw)


def lstm_sequence(x: Node, w_ih: Node, w_hh: Node, b_ih: Node, b_hh: Node) -> Node:
    """Four-gate LSTM over (B, T, D) from zero state; gate blocks ordered (i, f, g, o)."""
    xv, W, U, bi, bh = x.value, w_ih.value, w_hh.value, b_ih.value, b_hh.value
    B, T, _ = xv.shape
    H = U.shape[1]
    ax = xv @ W.T + bi + bh
    hs = np.zeros((B, T + 1, H))
    cs = np.zeros((B, T + 1, H))
    gates = np.empty((B, T, 4 * H))
    tcs = np.empty((B, T, H))
    h, c = hs[:, 0], cs[:, 0]
    for t in range(T):
        a = ax[:, t] + h @ U.T
        ig = _sigmoid(a[:, :H])
        fg = _sigmoid(a[:, H:2 * H])
        gg = np.tanh(a[:, 2 * H:3 * H])
        og = _sigmoid(a[:, 3 * H:])
        c = fg * c + ig * gg
        tc = np.tanh(c)
        h = og * tc
        gates[:, t, :H], gates[:, t, H:2 * H] = ig, fg
        gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:] = gg, og
        tcs[:, t] = tc
        hs[:, t + 1], cs[:, t + 1] = h, c

    def bw(g):
        d_a = np.empty((B, T, 4 * H))
        dh = np.zeros((B, H))
        dc = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh = dh + g[:, t]
            ig, fg = gates[:, t, :H], gates[:, t, H:2 * H]
            gg, og = gates[:, t, 2 * H:3 * H], gates[:, t, 3 * H:]
            tc = tcs[:, t]
            dc = dc + dh * og * (1.0 - tc * tc)
            d_a[:, t, :H] = dc * gg * ig * (1.0 - ig)
            d_a[:, t, H:2 * H] = dc * cs[:, t] * fg * (1.0 - fg)
            d_a[:, t, 2 * H:3 * H] = dc * ig * (1.0 - gg * gg)
            d_a[:, t, 3 * H:] = dh * tc * og * (1.0 - og)
            dc = dc * fg
            dh = d_a[:, t] @ U
        flat = d_a.reshape(-1, 4 * H)
        gx = d_a @ W
        gW = flat.T @ xv.reshape(-1, xv.shape[-1])
        gU = flat.T @ hs[:, :-1].reshape(-1, H)
        gb = flat.sum(axis=0)
        return gx, gW, gU, gb, gb

    return Node(hs[:, 1:], (x, w_ih, w_hh, b_ih, b_hh), "lstm_seq", bw)


def complex_basis_apply(phi: np.ndarray, coeffs: Node) -> Node:
    """``y = phi @ c`` with complex constant ``phi`` (..., K) and real-stacked ``c`` (K, 2).

    Returns (..., 2) = [Re y, Im y].
    """
    cv = coeffs.value
    pr, pi = phi.real, phi.imag
    yr = pr @ cv[:, 0] - pi @ cv[:, 1]
    yi = pr @ cv[:, 1] + pi @ cv[:, 0]

    def bw(g):
        gr, gi = g[..., 0].reshape(-1), g[..., 1].reshape(-1)
        fr, fi = pr.reshape(-1, pr.shape[-1]), pi.reshape(-1, pi.shape[-1])
        g_re = fr.T @ gr + fi.T @ gi
        g_im = -fi.T @ gr + fr.T @ gi
        return (np.stack([g_re, g_im], axis=1),)

    return Node(np.stack([yr, yi], axis=-1), (coeffs,), "basis", bw)
