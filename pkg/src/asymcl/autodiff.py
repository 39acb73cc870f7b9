"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every operation as a node with an integer id. Ids are
handed out in creation order, so the node list is already topologically
sorted and ``backward`` is a single reverse sweep.

The op set is closed::

    add sub mul_elementwise matmul relu exp log neg sum mean
    scale_by_constant max_with_constant l2_normalize_rows dot_rows
    softmax_rows_with_mask

Elementwise binary ops accept equal shapes, a scalar right operand, or a
right operand matching the trailing dimension (bias rows).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, ValidationError


def as_tensor(data) -> np.ndarray:
    """Copy ``data`` into a read-only float64 array, rejecting NaN/Inf."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("tensor data must be finite")
    arr.setflags(write=False)
    return arr


@dataclass
class _Node:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    attrs: dict = field(default_factory=dict)
    saved: dict = field(default_factory=dict)


# -- forward / backward rules -------------------------------------------------

def _broadcast_ok(a: tuple, b: tuple) -> bool:
    return a == b or b == () or (len(b) == 1 and len(a) >= 1 and a[-1] == b[0])


def _check_binary(op, a, b):
    if not _broadcast_ok(a.shape, b.shape):
        raise ValidationError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def _f_add(vals, attrs, saved):
    _check_binary("add", *vals)
    return vals[0] + vals[1]


def _b_add(g, vals, out, attrs, saved):
    return g, _unbroadcast(g, vals[1].shape)


def _f_sub(vals, attrs, saved):
    _check_binary("sub", *vals)
    return vals[0] - vals[1]


def _b_sub(g, vals, out, attrs, saved):
    return g, -_unbroadcast(g, vals[1].shape)


def _f_mul(vals, attrs, saved):
    _check_binary("mul_elementwise", *vals)
    return vals[0] * vals[1]


def _b_mul(g, vals, out, attrs, saved):
    a, b = vals
    return g * b, _unbroadcast(g * a, b.shape)


def _f_matmul(vals, attrs, saved):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def _b_matmul(g, vals, out, attrs, saved):
    a, b = vals
    return g @ b.T, a.T @ g


def _f_relu(vals, attrs, saved):
    return np.maximum(vals[0], 0.0)


def _b_relu(g, vals, out, attrs, saved):
    # subgradient 0 at exactly 0
    return (g * (vals[0] > 0),)


def _f_exp(vals, attrs, saved):
    return np.exp(vals[0])


def _b_exp(g, vals, out, attrs, saved):
    return (g * out,)


def _f_log(vals, attrs, saved):
    x = vals[0]
    if np.any(x <= 0):
        raise DomainError("log of a non-positive value")
    return np.log(x)


def _b_log(g, vals, out, attrs, saved):
    return (g / vals[0],)


def _f_neg(vals, attrs, saved):
    return -vals[0]


def _b_neg(g, vals, out, attrs, saved):
    return (-g,)


def _f_sum(vals, attrs, saved):
    return np.asarray(vals[0].sum(axis=attrs.get("axis")))


def _b_sum(g, vals, out, attrs, saved):
    x = vals[0]
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _f_mean(vals, attrs, saved):
    x = vals[0]
    if x.size == 0:
        raise ValidationError("mean of an empty tensor")
    return np.asarray(x.mean(axis=attrs.get("axis")))


def _b_mean(g, vals, out, attrs, saved):
    x = vals[0]
    axis = attrs.get("axis")
    count = x.size if axis is None else x.shape[axis]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / count, x.shape).copy(),)


def _f_scale(vals, attrs, saved):
    return vals[0] * attrs["c"]


def _b_scale(g, vals, out, attrs, saved):
    return (g * attrs["c"],)


def _f_maxc(vals, attrs, saved):
    return np.maximum(vals[0], attrs["c"])


def _b_maxc(g, vals, out, attrs, saved):
    return (g * (vals[0] > attrs["c"]),)


def _f_l2norm(vals, attrs, saved):
    x = vals[0]
    if x.ndim != 2:
        raise ValidationError("l2_normalize_rows expects a matrix")
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ValidationError("l2_normalize_rows: zero row has no direction")
    saved["norms"] = norms
    return x / norms


def _b_l2norm(g, vals, out, attrs, saved):
    y = out
    return ((g - y * np.sum(y * g, axis=1, keepdims=True)) / saved["norms"],)


def _f_dot_rows(vals, attrs, saved):
    a, b = vals
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValidationError(f"dot_rows: incompatible shapes {a.shape} and {b.shape}")
    return a @ b.T


def _b_dot_rows(g, vals, out, attrs, saved):
    a, b = vals
    return g @ b, g.T @ a


def _f_softmax(vals, attrs, saved):
    s = vals[0]
    if s.ndim != 2:
        raise ValidationError("softmax_rows_with_mask expects a matrix")
    mask = attrs.get("mask")
    if mask is None:
        mask = np.zeros(s.shape, dtype=bool)
    elif mask.shape != s.shape:
        raise ValidationError(f"mask shape {mask.shape} does not match {s.shape}")
    if np.any(mask.all(axis=1)):
        raise ValidationError("softmax_rows_with_mask: a row has no unmasked entries")
    shifted = np.where(mask, -np.inf, s)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(mask, 0.0, np.exp(shifted))
    return e / e.sum(axis=1, keepdims=True)


def _b_softmax(g, vals, out, attrs, saved):
    p = out
    return (p * (g - np.sum(p * g, axis=1, keepdims=True)),)


OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (_f_add, _b_add),
    "sub": (_f_sub, _b_sub),
    "mul_elementwise": (_f_mul, _b_mul),
    "matmul": (_f_matmul, _b_matmul),
    "relu": (_f_relu, _b_relu),
    "exp": (_f_exp, _b_exp),
    "log": (_f_log, _b_log),
    "neg": (_f_neg, _b_neg),
    "sum": (_f_sum, _b_sum),
    "mean": (_f_mean, _b_mean),
    "scale_by_constant": (_f_scale, _b_scale),
    "max_with_constant": (_f_maxc, _b_maxc),
    "l2_normalize_rows": (_f_l2norm, _b_l2norm),
    "dot_rows": (_f_dot_rows, _b_dot_rows),
    "softmax_rows_with_mask": (_f_softmax, _b_softmax),
}

_ARITY = {"add": 2, "sub": 2, "mul_elementwise": 2, "matmul": 2, "dot_rows": 2}


class Tape:
    """Append-only record of a computation. Single-threaded by design."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data, requires_grad: bool = False) -> int:
        value = as_tensor(data)
        self._nodes.append(_Node("leaf", (), value, bool(requires_grad)))
        return len(self._nodes) - 1

    def constant(self, data) -> int:
        return self.leaf(data, requires_grad=False)

    def value(self, node: int) -> np.ndarray:
        return self._nodes[node].value

    def apply(self, op: str, *inputs: int, **attrs) -> int:
        if op not in OPS:
            raise ValidationError(f"unknown op {op!r}")
        if len(inputs) != _ARITY.get(op, 1):
            raise ValidationError(f"{op} takes {_ARITY.get(op, 1)} input(s), got {len(inputs)}")
        for i in inputs:
            if not 0 <= i < len(self._nodes):
                raise ValidationError(f"unknown node id {i}")
        fwd, _ = OPS[op]
        vals = [self._nodes[i].value for i in inputs]
        saved: dict = {}
        out = np.asarray(fwd(vals, attrs, saved), dtype=np.float64)
        out.setflags(write=False)
        rg = any(self._nodes[i].requires_grad for i in inputs)
        self._nodes.append(_Node(op, tuple(inputs), out, rg, attrs, saved))
        return len(self._nodes) - 1

    def backward(self, root: int) -> dict[int, np.ndarray]:
        """Gradients of scalar ``root`` w.r.t. every grad-requiring leaf it depends on."""
        if self._nodes[root].value.size != 1:
            raise ValidationError(
                f"backward needs a scalar root, got shape {self._nodes[root].value.shape}"
            )
        grads: dict[int, np.ndarray] = {root: np.ones_like(self._nodes[root].value)}
        result: dict[int, np.ndarray] = {}
        for nid in range(root, -1, -1):
            g = grads.pop(nid, None)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.op == "leaf":
                if node.requires_grad:
                    result[nid] = g
                continue
            _, bwd = OPS[node.op]
            vals = [self._nodes[i].value for i in node.inputs]
            in_grads = bwd(g, vals, node.value, node.attrs, node.saved)
            for i, gi in zip(node.inputs, in_grads):
                if not self._nodes[i].requires_grad:
                    continue
                if i in grads:
                    grads[i] = grads[i] + gi
                else:
                    grads[i] = gi
        return result

    # thin named wrappers, so model and loss code reads naturally

    def add(self, a, b): return self.apply("add", a, b)
    def sub(self, a, b): return self.apply("sub", a, b)
    def mul(self, a, b): return self.apply("mul_elementwise", a, b)
    def matmul(self, a, b): return self.apply("matmul", a, b)
    def relu(self, a): return self.apply("relu", a)
    def exp(self, a): return self.apply("exp", a)
    def log(self, a): return self.apply("log", a)
    def neg(self, a): return self.apply("neg", a)
    def sum(self, a, axis=None): return self.apply("sum", a, axis=axis)
    def mean(self, a, axis=None): return self.apply("mean", a, axis=axis)
    def scale(self, a, c): return self.apply("scale_by_constant", a, c=float(c))
    def maximum(self, a, c): return self.apply("max_with_constant", a, c=float(c))
    def l2_normalize_rows(self, a): return self.apply("l2_normalize_rows", a)
    def dot_rows(self, a, b): return self.apply("dot_rows", a, b)

    def softmax_rows(self, a, mask=None):
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
        return self.apply("softmax_rows_with_mask", a, mask=mask)
