# src/model/tape.py
"""
Reverse-mode differentiation over numpy arrays.

A Tape records every primitive in execution order together with a
vector-Jacobian closure. Execution order is a topological order of the
graph, so `backward` walks the record once in reverse and visits every
node exactly once.

    tape = Tape()
    w = tape.leaf(np.ones(3), name="w")
    loss = tape.sum(w * w)
    grads = tape.backward(loss)     # {w.index: 2·w}
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int]

# differentiable ops on Tape; gradcheck.primitive_cases covers each one
PRIMITIVES = (
    "add", "sub", "mul", "pow", "exp", "log", "sqrt", "sin", "cos", "relu", "sigmoid", "clip",
    "matmul", "transpose", "reshape", "concat", "gather", "broadcast_to",
    "sum", "mean", "max", "softmax",
)


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "index", "name")
    __array_priority__ = 1000   # make ndarray ⊕ Var dispatch to Var

    def __init__(self, value: np.ndarray, tape: "Tape", index: int, name: Optional[str] = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(#{self.index}{' ' + self.name if self.name else ''}, shape={self.shape})"

    # arithmetic sugar; every path ends in a Tape primitive
    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(other, self)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Var):
            return self.tape.mul(self, self.tape.pow(other, -1.0))
        return self.tape.mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __rmatmul__(self, other):
        return self.tape.matmul(other, self)

    @property
    def T(self):
        return self.tape.transpose(self)


@dataclass
class _Node:
    inputs: Tuple[int, ...]
    vjp: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Operation record plus the primitive set."""

    def __init__(self):
        self.values: List[np.ndarray] = []
        self.nodes: List[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # ---------- recording ----------------------------------
    def _record(self, value, inputs: Tuple[int, ...] = (), vjp=None, name: Optional[str] = None) -> Var:
        value = np.asarray(value, dtype=np.float64)
        self.values.append(value)
        self.nodes.append(_Node(inputs, vjp))
        return Var(value, self, len(self.nodes) - 1, name)

    def leaf(self, value: ArrayLike, name: Optional[str] = None) -> Var:
        """Differentiable input (a parameter or a gradient-checked array)."""
        return self._record(np.array(value, dtype=np.float64), name=name)

    def constant(self, value: ArrayLike) -> Var:
        return self._record(np.asarray(value, dtype=np.float64))

    def lift(self, x: Union[Var, ArrayLike]) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ValueError("Var belongs to a different tape")
            return x
        return self.constant(x)

    def stop_gradient(self, x: Var) -> Var:
        """Same value, no path back to `x`."""
        return self.constant(self.lift(x).value.copy())

    # ---------- elementwise --------------------------------
    def add(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.shape, b.shape
        return self._record(a.value + b.value, (a.index, b.index),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        sa, sb = a.shape, b.shape
        return self._record(a.value - b.value, (a.index, b.index),
                            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        av, bv = a.value, b.value
        return self._record(av * bv, (a.index, b.index),
                            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def pow(self, a, exponent: float) -> Var:
        a = self.lift(a)
        av = a.value
        return self._record(av ** exponent, (a.index,),
                            lambda g: (g * exponent * av ** (exponent - 1.0),))

    def exp(self, a) -> Var:
        a = self.lift(a)
        out = np.exp(a.value)
        return self._record(out, (a.index,), lambda g: (g * out,))

    def log(self, a) -> Var:
        a = self.lift(a)
        av = a.value
        return self._record(np.log(av), (a.index,), lambda g: (g / av,))

    def sqrt(self, a) -> Var:
        a = self.lift(a)
        out = np.sqrt(a.value)
        return self._record(out, (a.index,), lambda g: (0.5 * g / out,))

    def sin(self, a) -> Var:
        a = self.lift(a)
        av = a.value
        return self._record(np.sin(av), (a.index,), lambda g: (g * np.cos(av),))

    def cos(self, a) -> Var:
        a = self.lift(a)
        av = a.value
        return self._record(np.cos(av), (a.index,), lambda g: (-g * np.sin(av),))

    def relu(self, a) -> Var:
        a = self.lift(a)
        mask = a.value > 0
        return self._record(np.where(mask, a.value, 0.0), (a.index,), lambda g: (g * mask,))

    def sigmoid(self, a) -> Var:
        a = self.lift(a)
        av = a.value
        e = np.exp(-np.abs(av))
        out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._record(out, (a.index,), lambda g: (g * out * (1.0 - out),))

    def clip(self, a, lo: float, hi: float) -> Var:
        a = self.lift(a)
        mask = (a.value >= lo) & (a.value <= hi)
        return self._record(np.clip(a.value, lo, hi), (a.index,), lambda g: (g * mask,))

    # ---------- linear algebra -----------------------------
    def matmul(self, a, b) -> Var:
        a, b = self.lift(a), self.lift(b)
        av, bv = a.value, b.value
        if av.ndim != 2 or bv.ndim != 2:
            raise ValueError(f"matmul expects 2-D operands, got {av.shape} @ {bv.shape}")
        return self._record(av @ bv, (a.index, b.index), lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a) -> Var:
        a = self.lift(a)
        return self._record(a.value.T, (a.index,), lambda g: (g.T,))

    def reshape(self, a, shape: Tuple[int, ...]) -> Var:
        a = self.lift(a)
        old = a.shape
        return self._record(a.value.reshape(shape), (a.index,), lambda g: (g.reshape(old),))

    def concat(self, parts: Sequence, axis: int = -1) -> Var:
        parts = [self.lift(p) for p in parts]
        sizes = [p.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return self._record(np.concatenate([p.value for p in parts], axis=axis),
                            tuple(p.index for p in parts), vjp)

    def gather(self, a, indices: np.ndarray) -> Var:
        """Rows of `a` at `indices` (any index shape); repeated rows accumulate."""
        a = self.lift(a)
        idx = np.asarray(indices, dtype=np.int64)
        shape = a.shape

        def vjp(g):
            out = np.zeros(shape)
            np.add.at(out, idx.reshape(-1), g.reshape((-1,) + shape[1:]))
            return (out,)

        return self._record(a.value[idx], (a.index,), vjp)

    def broadcast_to(self, a, shape: Tuple[int, ...]) -> Var:
        a = self.lift(a)
        old = a.shape
        return self._record(np.broadcast_to(a.value, shape).copy(), (a.index,),
                            lambda g: (_unbroadcast(g, old),))

    # ---------- reductions ---------------------------------
    def sum(self, a, axis: Optional[int] = None, keepdims: bool = False) -> Var:
        a = self.lift(a)
        shape = a.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._record(a.value.sum(axis=axis, keepdims=keepdims), (a.index,), vjp)

    def mean(self, a, axis: Optional[int] = None, keepdims: bool = False) -> Var:
        a = self.lift(a)
        shape = a.shape
        count = a.value.size if axis is None else shape[axis]

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g / count, shape).copy(),)

        return self._record(a.value.mean(axis=axis, keepdims=keepdims), (a.index,), vjp)

    def max(self, a, axis: int, keepdims: bool = False) -> Var:
        """Max along `axis`; the gradient goes to the first maximal entry."""
        a = self.lift(a)
        av = a.value
        arg = np.argmax(av, axis=axis)

        def vjp(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            out = np.zeros_like(av)
            np.put_along_axis(out, np.expand_dims(arg, axis), g, axis=axis)
            return (out,)

        return self._record(av.max(axis=axis, keepdims=keepdims), (a.index,), vjp)

    def softmax(self, a, axis: int = -1) -> Var:
        """Numerically stable softmax along `axis` (rows by default)."""
        a = self.lift(a)
        shifted = a.value - a.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)
        return self._record(out, (a.index,),
                            lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))

    # ---------- backward -----------------------------------
    def backward(self, output: Var, seed: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
        """
        Gradients of `output` (scalar unless `seed` is given) with respect to
        every recorded value that influences it, keyed by Var.index.
        """
        output = self.lift(output)
        if seed is None:
            if output.value.size != 1:
                raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
            seed = np.ones_like(output.value)
        grads: Dict[int, np.ndarray] = {output.index: np.asarray(seed, dtype=np.float64)}

        for index in range(output.index, -1, -1):
            g = grads.get(index)
            node = self.nodes[index]
            if g is None or node.vjp is None:
                continue
            for inp, gi in zip(node.inputs, node.vjp(g)):
                if gi is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + gi
                else:
                    grads[inp] = gi
        return grads

    def grad(self, grads: Dict[int, np.ndarray], var: Var) -> np.ndarray:
        """Gradient for `var`, zeros when `var` does not reach the output."""
        g = grads.get(var.index)
        return np.zeros_like(var.value) if g is None else g
