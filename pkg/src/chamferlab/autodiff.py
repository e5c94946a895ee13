"""Minimal reverse-mode differentiation over dense float64 arrays.

Covers exactly the primitives the denoiser and projector MLPs need:
matmul, broadcast add, elementwise mul, silu, tanh, row gather, column
concat, reductions. Backward visits nodes in reverse recording order,
which is a valid reverse topological order because every op appends its
result after its operands.
"""

from __future__ import annotations

import numpy as np


class GradError(Exception):
    pass


class Tape:
    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, value, requires_grad: bool = True) -> "Var":
        return Var(self, np.asarray(value, dtype=np.float64), requires_grad)

    def constant(self, value) -> "Var":
        return Var(self, np.asarray(value, dtype=np.float64), False)

    def backward(self, output: "Var") -> None:
        """Accumulate .grad on every recorded var, seeding d(output)=1."""
        if output.value.size != 1:
            raise GradError(f"backward target must be scalar, got shape {output.value.shape}")
        self.backward_from(output, np.ones_like(output.value))

    def backward_from(self, output: "Var", seed) -> None:
        """Backward pass seeded with an explicit upstream gradient."""
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != output.value.shape:
            raise GradError(f"seed shape {seed.shape} != output shape {output.value.shape}")
        for node in self.nodes:
            node.grad = None
        output.grad = seed.copy()
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            for parent, vjp in node._parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = contrib.copy()
                else:
                    parent.grad += contrib


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to the given operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


class Var:
    __slots__ = ("tape", "value", "requires_grad", "grad", "_parents")

    def __init__(self, tape: Tape, value: np.ndarray, requires_grad: bool, parents=()):
        self.tape = tape
        self.value = value
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)
        self.grad = None
        self._parents = tuple(parents)
        tape.nodes.append(self)

    def _coerce(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        other = self._coerce(other)
        return Var(self.tape, self.value + other.value, False, [
            (self, lambda g: _unbroadcast(g, self.value.shape)),
            (other, lambda g: _unbroadcast(g, other.value.shape)),
        ])

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        return Var(self.tape, self.value - other.value, False, [
            (self, lambda g: _unbroadcast(g, self.value.shape)),
            (other, lambda g: _unbroadcast(-g, other.value.shape)),
        ])

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        return Var(self.tape, self.value * other.value, False, [
            (self, lambda g: _unbroadcast(g * other.value, self.value.shape)),
            (other, lambda g: _unbroadcast(g * self.value, other.value.shape)),
        ])

    __rmul__ = __mul__

    def __neg__(self):
        return Var(self.tape, -self.value, False, [(self, lambda g: -g)])

    def __matmul__(self, other):
        other = self._coerce(other)
        return Var(self.tape, self.value @ other.value, False, [
            (self, lambda g: g @ other.value.T),
            (other, lambda g: self.value.T @ g),
        ])

    def sum(self):
        return Var(self.tape, np.array(self.value.sum()), False, [
            (self, lambda g: np.full_like(self.value, float(g))),
        ])

    def mean(self):
        n = self.value.size
        return Var(self.tape, np.array(self.value.mean()), False, [
            (self, lambda g: np.full_like(self.value, float(g) / n)),
        ])


def silu(x: Var) -> Var:
    s = 1.0 / (1.0 + np.exp(-x.value))
    out = x.value * s
    # d/dx [x*sigmoid(x)] = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
    local = s * (1.0 + x.value * (1.0 - s))
    return Var(x.tape, out, False, [(x, lambda g: g * local)])


def tanh(x: Var) -> Var:
    t = np.tanh(x.value)
    return Var(x.tape, t, False, [(x, lambda g: g * (1.0 - t * t))])


def exp(x: Var) -> Var:
    e = np.exp(x.value)
    return Var(x.tape, e, False, [(x, lambda g: g * e)])


def log(x: Var) -> Var:
    return Var(x.tape, np.log(x.value), False, [(x, lambda g: g / x.value)])


def take_rows(table: Var, idx) -> Var:
    """Gather rows; gradient scatter-adds back into the table."""
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return out

    return Var(table.tape, table.value[idx], False, [(table, vjp)])


def concat_cols(parts: list[Var]) -> Var:
    widths = [p.value.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    value = np.concatenate([p.value for p in parts], axis=1)
    parents = []
    for i, p in enumerate(parts):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        parents.append((p, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return Var(parts[0].tape, value, False, parents)


def logsumexp_rows(x: Var) -> Var:
    """Row-wise log-sum-exp, numerically stable; used by the toy classifier."""
    m = x.value.max(axis=1, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).ravel()
    softmax = e / s
    return Var(x.tape, out, False, [(x, lambda g: g[:, None] * softmax)])
