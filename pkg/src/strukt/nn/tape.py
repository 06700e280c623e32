"""Array-level reverse-mode differentiation.

A :class:`Tape` records every primitive applied to :class:`Var` handles in
creation order, so walking the record backwards is a valid reverse
topological order.  Parameters are views into a flat :class:`ParamStore`
vector and their adjoints are scattered into a flat gradient of the same
layout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..errors import ContractError
from .params import ParamStore

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class Node:
    op: str
    value: np.ndarray
    parents: tuple[int, ...]
    backward: Callable | None
    requires_grad: bool
    flops: int = 0


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "idx")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        n = self.tape.nodes[self.idx]
        return f"Var({n.op}, shape={n.value.shape})"

    def _lift(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.constant(other)

    def __add__(self, other):
        return self.tape.add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, self._lift(other))

    def __rsub__(self, other):
        return self.tape.sub(self._lift(other), self)

    def __mul__(self, other):
        return self.tape.mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self.tape.mul(self, self.tape.power(other, -1.0))
        return self.tape.mul(self, self.tape.constant(1.0 / np.asarray(other, dtype=float)))

    def __neg__(self):
        return self.tape.mul(self, self.tape.constant(-1.0))

    def __matmul__(self, other):
        return self.tape.matmul(self, self._lift(other))

    def __pow__(self, exponent: float):
        return self.tape.power(self, exponent)

    def __getitem__(self, key):
        return self.tape.getitem(self, key)

    @property
    def T(self):
        return self.tape.transpose(self)

    def sum(self, axis=None, keepdims=False):
        return self.tape.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return self.tape.mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return self.tape.reshape(self, shape)

    def transpose(self, *axes):
        return self.tape.transpose(self, axes or None)


class Tape:
    """Append-only record of primitive operations."""

    def __init__(self, params: ParamStore | None = None):
        self.params = params
        self.nodes: list[Node] = []
        self._param_slots: dict[int, tuple[int, int]] = {}
        # node indices, not Vars: a Var refers back to the tape, and a cycle
        # would keep every recorded buffer alive until the cyclic collector runs
        self._param_nodes: dict[str, int] = {}
        self.adjoints: dict[int, np.ndarray] | None = None

    # ------------------------------------------------------------- records

    def _push(self, op, value, parents=(), backward=None, flops=None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        req = any(self.nodes[p].requires_grad for p in parents)
        if flops is None:
            flops = value.size
        self.nodes.append(Node(op, value, tuple(parents), backward if req else None, req, int(flops)))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value) -> Var:
        return self._push("const", np.array(value, dtype=np.float64), flops=0)

    def leaf(self, value) -> Var:
        """A differentiable input that is not part of the parameter store."""
        var = self._push("leaf", np.array(value, dtype=np.float64), flops=0)
        self.nodes[var.idx].requires_grad = True
        return var

    def param(self, name: str) -> Var:
        if self.params is None:
            raise ContractError("tape has no parameter store")
        if name in self._param_nodes:
            return Var(self, self._param_nodes[name])
        offset, shape = self.params.index[name]
        var = self._push("param", self.params.view(name), flops=0)
        self.nodes[var.idx].requires_grad = True
        self._param_slots[var.idx] = (offset, int(np.prod(shape, dtype=int)))
        self._param_nodes[name] = var.idx
        return var

    def stop_gradient(self, x: Var) -> Var:
        return self.constant(x.value.copy())

    # ---------------------------------------------------------- elementwise

    def add(self, a: Var, b: Var) -> Var:
        sa, sb = a.shape, b.shape
        return self._push("add", a.value + b.value, (a.idx, b.idx),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Var, b: Var) -> Var:
        sa, sb = a.shape, b.shape
        return self._push("sub", a.value - b.value, (a.idx, b.idx),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        return self._push("mul", av * bv, (a.idx, b.idx),
                          lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def power(self, x: Var, exponent: float) -> Var:
        xv, p = x.value, float(exponent)
        return self._push("power", xv ** p, (x.idx,), lambda g: (g * p * xv ** (p - 1.0),))

    def log(self, x: Var) -> Var:
        xv = x.value
        return self._push("log", np.log(xv), (x.idx,), lambda g: (g / xv,))

    def exp(self, x: Var) -> Var:
        y = np.exp(x.value)
        return self._push("exp", y, (x.idx,), lambda g: (g * y,))

    def abs(self, x: Var) -> Var:
        s = np.sign(x.value)
        return self._push("abs", np.abs(x.value), (x.idx,), lambda g: (g * s,))

    def sigmoid(self, x: Var) -> Var:
        y = expit(x.value)
        return self._push("sigmoid", y, (x.idx,), lambda g: (g * y * (1.0 - y),), flops=4 * y.size)

    def gelu(self, x: Var) -> Var:
        """Tanh-approximated GELU."""
        xv = x.value
        x2 = xv * xv
        t = np.tanh(_SQRT_2_OVER_PI * xv * (1.0 + 0.044715 * x2))
        y = 0.5 * xv * (1.0 + t)

        def back(g):
            du = _SQRT_2_OVER_PI * (1.0 + 0.134145 * x2)
            return (g * (0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * du),)

        return self._push("gelu", y, (x.idx,), back, flops=10 * y.size)

    def relu(self, x: Var) -> Var:
        m = x.value > 0
        return self._push("relu", np.where(m, x.value, 0.0), (x.idx,), lambda g: (g * m,))

    def clip(self, x: Var, lo: float, hi: float) -> Var:
        m = (x.value >= lo) & (x.value <= hi)
        return self._push("clip", np.clip(x.value, lo, hi), (x.idx,), lambda g: (g * m,))

    def where(self, cond, a: Var, b: Var) -> Var:
        c = np.asarray(cond, dtype=bool)
        sa, sb = a.shape, b.shape
        return self._push("where", np.where(c, a.value, b.value), (a.idx, b.idx),
                          lambda g: (_unbroadcast(np.where(c, g, 0.0), sa), _unbroadcast(np.where(c, 0.0, g), sb)))

    # -------------------------------------------------------------- linear

    def matmul(self, a: Var, b: Var) -> Var:
        av, bv = a.value, b.value
        y = av @ bv
        k = av.shape[-1]

        def back(g):
            ga = g @ np.swapaxes(bv, -1, -2)
            gb = np.swapaxes(av, -1, -2) @ g
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

        return self._push("matmul", y, (a.idx, b.idx), back, flops=2 * y.size * k)

    def softmax(self, x: Var) -> Var:
        """Softmax along the last axis."""
        z = x.value - x.value.max(axis=-1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=-1, keepdims=True)
        return self._push("softmax", y, (x.idx,),
                          lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), flops=5 * y.size)

    def qk_softmax(self, q: Var, k: Var, scale: float) -> Var:
        """``softmax(scale * q @ k^T)`` row-wise, keeping only the probabilities.

        ``q`` and ``k`` are ``[..., L, d]``.  Fusing the score product with
        the softmax halves the number of ``L x L`` buffers held for backward.
        """
        qv, kv = q.value, k.value
        s = (qv @ np.swapaxes(kv, -1, -2)) * scale
        s -= s.max(axis=-1, keepdims=True)
        np.exp(s, out=s)
        s /= s.sum(axis=-1, keepdims=True)
        p = s

        def back(g):
            gs = p * (g - (g * p).sum(axis=-1, keepdims=True))
            gs *= scale
            return gs @ kv, np.swapaxes(gs, -1, -2) @ qv

        flops = 2 * p.size * qv.shape[-1] + 5 * p.size
        return self._push("qk_softmax", p, (q.idx, k.idx), back, flops=flops)

    def layernorm(self, x: Var, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
        xv = x.value
        mu = xv.mean(axis=-1, keepdims=True)
        xc = xv - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        gv = gain.value
        y = xhat * gv + bias.value

        def back(g):
            gx_hat = g * gv
            gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
            lead = tuple(range(g.ndim - 1))
            return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

        return self._push("layernorm", y, (x.idx, gain.idx, bias.idx), back, flops=8 * y.size)

    def depthwise_conv1d(self, x: Var, w: Var) -> Var:
        """Same-padded per-channel convolution: ``x [L, C]``, ``w [C, K]`` with odd ``K``."""
        xv, wv = x.value, w.value
        L, C = xv.shape
        K = wv.shape[1]
        if K % 2 == 0:
            raise ContractError("depthwise kernel must have odd length")
        p = K // 2
        xp = np.zeros((L + 2 * p, C))
        xp[p:p + L] = xv
        y = np.zeros((L, C))
        for k in range(K):
            y += xp[k:k + L] * wv[:, k]

        def back(g):
            gxp = np.zeros_like(xp)
            gw = np.empty_like(wv)
            for k in range(K):
                gxp[k:k + L] += g * wv[:, k]
                gw[:, k] = (g * xp[k:k + L]).sum(axis=0)
            return gxp[p:p + L], gw

        return self._push("depthwise_conv1d", y, (x.idx, w.idx), back, flops=2 * y.size * K)

    def strided_conv1d(self, x: Var, w: Var, stride: int) -> Var:
        """Per-channel conv with kernel == stride: ``x [F, C]`` -> ``[ceil(F/stride), C]``.

        The input is zero-padded at the end to a whole number of strides.
        """
        xv, wv = x.value, w.value
        F, C = xv.shape
        if wv.shape != (C, stride):
            raise ContractError(f"stem kernel shape {wv.shape} != {(C, stride)}")
        Lp = -(-F // stride)
        xp = np.zeros((Lp * stride, C))
        xp[:F] = xv
        blocks = xp.reshape(Lp, stride, C)
        y = np.einsum("lsc,cs->lc", blocks, wv)

        def back(g):
            gx = (g[:, None, :] * wv.T[None, :, :]).reshape(Lp * stride, C)[:F]
            gw = np.einsum("lsc,lc->cs", blocks, g)
            return gx, gw

        return self._push("strided_conv1d", y, (x.idx, w.idx), back, flops=2 * y.size * stride)

    # ------------------------------------------------------------ structure

    def reshape(self, x: Var, shape) -> Var:
        old = x.shape
        return self._push("reshape", x.value.reshape(shape), (x.idx,), lambda g: (g.reshape(old),), flops=0)

    def transpose(self, x: Var, axes=None) -> Var:
        y = np.transpose(x.value, axes)
        inv = None if axes is None else np.argsort(axes)
        return self._push("transpose", y, (x.idx,), lambda g: (np.transpose(g, inv),), flops=0)

    def getitem(self, x: Var, key) -> Var:
        shape = x.shape

        basic = all(isinstance(k, (slice, int, type(None), type(Ellipsis)))
                    for k in (key if isinstance(key, tuple) else (key,)))

        def back(g):
            out = np.zeros(shape)
            if basic:
                out[key] = g
            else:
                np.add.at(out, key, g)
            return (out,)

        return self._push("slice", x.value[key], (x.idx,), back, flops=0)

    def concat(self, xs: Sequence[Var], axis: int = 0) -> Var:
        sizes = [v.shape[axis] for v in xs]
        cuts = np.cumsum(sizes)[:-1]
        return self._push("concat", np.concatenate([v.value for v in xs], axis=axis), tuple(v.idx for v in xs),
                          lambda g: tuple(np.split(g, cuts, axis=axis)), flops=0)

    def sum(self, x: Var, axis=None, keepdims=False) -> Var:
        shape = x.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._push("sum", x.value.sum(axis=axis, keepdims=keepdims), (x.idx,), back, flops=x.size)

    def mean(self, x: Var, axis=None, keepdims=False) -> Var:
        n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
        return self.mul(self.sum(x, axis, keepdims), self.constant(1.0 / n))

    # ------------------------------------------------------------- backward

    def backward(self, root: Var, keep_adjoints: bool = False) -> np.ndarray | None:
        """Propagate adjoints from a scalar ``root``.

        Returns the flat parameter gradient (``None`` when the tape has no
        parameter store).  With ``keep_adjoints`` every reached node's
        adjoint is kept in :attr:`adjoints`.
        """
        if root.tape is not self:
            raise ContractError("root belongs to another tape")
        if root.value.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
        grad = None if self.params is None else np.zeros(self.params.size)
        adj: dict[int, np.ndarray] = {root.idx: np.ones_like(root.value)}
        kept = {} if keep_adjoints else None
        for i in range(root.idx, -1, -1):
            g = adj.pop(i, None)
            if g is None:
                continue
            node = self.nodes[i]
            if kept is not None:
                kept[i] = g
            if i in self._param_slots and grad is not None:
                off, n = self._param_slots[i]
                grad[off:off + n] += g.reshape(-1)
            if node.backward is None:
                continue
            for p, gp in zip(node.parents, node.backward(g)):
                if not self.nodes[p].requires_grad:
                    continue
                gp = np.asarray(gp, dtype=np.float64)
                if p in adj:
                    adj[p] = adj[p] + gp
                else:
                    adj[p] = gp
        self.adjoints = kept
        return grad

    def adjoint(self, var: Var) -> np.ndarray:
        if self.adjoints is None:
            raise ContractError("run backward(keep_adjoints=True) first")
        return self.adjoints.get(var.idx, np.zeros_like(var.value))

    # ---------------------------------------------------------- accounting

    def total_flops(self, ops: Sequence[str] | None = None) -> int:
        return sum(n.flops for n in self.nodes if ops is None or n.op in ops)

    def activation_floats(self, ops: Sequence[str] | None = None) -> int:
        """Floats held by computed nodes (constants and parameters excluded)."""
        skip = {"const", "param", "leaf"}
        return sum(n.value.size for n in self.nodes
                   if n.op not in skip and (ops is None or n.op in ops))
