"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records :class:`Node` objects in creation order, which is
already a topological order, so the backward pass is a single reversed sweep.
The op set is closed: ``input, matmul, add, hadamard, sigmoid, tanh, concat,
slice, scale, sum, sq_norm``. Everything else (subtraction, dropout, losses)
is composed from these.

Example:
    >>> tape = Tape()
    >>> x = tape.input(np.array(3.0))
    >>> y = hadamard(x, x)
    >>> float(tape.backward(y)[x])
    6.0
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

OP_KINDS = (
    "input",
    "matmul",
    "add",
    "hadamard",
    "sigmoid",
    "tanh",
    "concat",
    "slice",
    "scale",
    "sum",
    "sq_norm",
)

ArrayLike = Union[np.ndarray, float, Sequence]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op."""


class Node:
    __slots__ = ("value", "op_kind", "parents", "attrs", "grad", "tape", "index", "requires_grad")

    def __init__(self, value, op_kind, parents, attrs, tape, index, requires_grad=True):
        self.value: np.ndarray = value
        self.op_kind: str = op_kind
        self.parents: tuple = parents
        self.attrs: dict = attrs
        self.grad: Optional[np.ndarray] = None
        self.tape: Tape = tape
        self.index: int = index
        self.requires_grad: bool = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node({self.op_kind}, shape={self.value.shape}, #{self.index})"


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}") from None


def _forward(op: str, vals: List[np.ndarray], attrs: dict) -> np.ndarray:
    if op == "matmul":
        a, b = vals
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
        return a @ b
    if op == "add":
        _broadcast_shape(op, vals[0].shape, vals[1].shape)
        return vals[0] + vals[1]
    if op == "hadamard":
        _broadcast_shape(op, vals[0].shape, vals[1].shape)
        return vals[0] * vals[1]
    if op == "sigmoid":
        return expit(vals[0])
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "concat":
        axis = attrs["axis"]
        ref = vals[0].shape
        for v in vals[1:]:
            if v.ndim != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(v.shape, ref)) if i != axis
            ):
                raise ShapeError(f"concat: shapes {ref} and {v.shape} differ off axis {axis}")
        return np.concatenate(vals, axis=axis)
    if op == "slice":
        x = vals[0]
        start, stop, axis = attrs["start"], attrs["stop"], attrs["axis"]
        if x.ndim == 0 or not (0 <= start < stop <= x.shape[axis]):
            raise ShapeError(
                f"slice: [{start}:{stop}] out of bounds for axis {axis} of shape {x.shape}"
            )
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, stop)
        return x[tuple(index)]
    if op == "scale":
        return attrs["factor"] * vals[0]
    if op == "sum":
        axis = attrs.get("axis")
        if axis is None:
            return np.asarray(vals[0].sum())
        return vals[0].sum(axis=axis, keepdims=True)
    if op == "sq_norm":
        return np.asarray(np.sum(vals[0] * vals[0]))
    raise ValueError(f"unknown op kind {op!r}")


def _backward(node: Node, g: np.ndarray) -> List[np.ndarray]:
    op = node.op_kind
    vals = [p.value for p in node.parents]
    if op == "matmul":
        a, b = vals
        pa, pb = node.parents
        return [g @ b.T if pa.requires_grad else None, a.T @ g if pb.requires_grad else None]
    if op == "add":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    if op == "hadamard":
        a, b = vals
        pa, pb = node.parents
        return [
            _unbroadcast(g * b, a.shape) if pa.requires_grad else None,
            _unbroadcast(g * a, b.shape) if pb.requires_grad else None,
        ]
    if op == "sigmoid":
        s = node.value
        return [g * s * (1.0 - s)]
    if op == "tanh":
        y = node.value
        return [g * (1.0 - y * y)]
    if op == "concat":
        axis = node.attrs["axis"]
        bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
        return np.split(g, bounds, axis=axis)
    if op == "slice":
        x = vals[0]
        out = np.zeros_like(x)
        index = [slice(None)] * x.ndim
        index[node.attrs["axis"]] = slice(node.attrs["start"], node.attrs["stop"])
        out[tuple(index)] = g
        return [out]
    if op == "scale":
        return [node.attrs["factor"] * g]
    if op == "sum":
        return [np.broadcast_to(g, vals[0].shape).copy()]
    if op == "sq_norm":
        return [2.0 * g * vals[0]]
    raise ValueError(f"no backward rule for {op!r}")


class Tape:
    """Append-only record of nodes in topological order."""

    def __init__(self):
        self.nodes: List[Node] = []

    def input(self, value: ArrayLike) -> Node:
        """Register a differentiable leaf. The array is copied to float64."""
        arr = np.array(value, dtype=np.float64)
        return self._push(arr, "input", (), {})

    def constant(self, value: ArrayLike) -> Node:
        """Register a leaf that never receives a gradient (data, masks, targets)."""
        arr = np.asarray(value, dtype=np.float64)
        return self._push(arr, "input", (), {"constant": True}, requires_grad=False)

    def _push(self, value, op_kind, parents, attrs, requires_grad=True) -> Node:
        node = Node(value, op_kind, parents, attrs, self, len(self.nodes), requires_grad)
        self.nodes.append(node)
        return node

    def apply(self, op_kind: str, inputs: Sequence[Union[Node, ArrayLike]], **attrs) -> Node:
        """Evaluate ``op_kind`` on ``inputs`` and record the result.

        Non-node inputs are lifted to constant leaves on this tape.
        """
        if op_kind not in OP_KINDS or op_kind == "input":
            raise ValueError(f"unknown op kind {op_kind!r}")
        parents = []
        for x in inputs:
            if isinstance(x, Node):
                if x.tape is not self:
                    raise ValueError(f"{op_kind}: operand {x!r} belongs to another tape")
                parents.append(x)
            else:
                parents.append(self.constant(x))
        value = _forward(op_kind, [p.value for p in parents], attrs)
        needs = any(p.requires_grad for p in parents)
        return self._push(value, op_kind, tuple(parents), attrs, needs)

    def backward(self, loss: Node) -> Dict[Node, np.ndarray]:
        """Populate ``grad`` on every node; return the map for leaf nodes.

        Nodes that the loss does not depend on, and constant leaves, end with a
        zero gradient.
        """
        if loss.tape is not self:
            raise ValueError("loss node is not on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
        grads: Dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        # buffers in ``owned`` were allocated here and may be updated in place;
        # others can alias a child's gradient and are copied on first accumulation
        owned = set()
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            node.grad = g if g is not None else np.zeros_like(node.value)
            if g is None or not node.parents or not node.requires_grad:
                continue
            if node.op_kind == "slice":
                parent = node.parents[0]
                buf = grads.get(parent.index)
                if buf is None or parent.index not in owned:
                    buf = np.zeros_like(parent.value) if buf is None else buf.copy()
                    grads[parent.index] = buf
                    owned.add(parent.index)
                index = [slice(None)] * buf.ndim
                index[node.attrs["axis"]] = slice(node.attrs["start"], node.attrs["stop"])
                buf[tuple(index)] += g
                continue
            for parent, pg in zip(node.parents, _backward(node, g)):
                if not parent.requires_grad:
                    continue
                i = parent.index
                if i not in grads:
                    grads[i] = pg
                elif i in owned:
                    grads[i] += pg
                else:
                    grads[i] = grads[i] + pg
                    owned.add(i)
        for node in self.nodes[loss.index + 1 :]:
            node.grad = np.zeros_like(node.value)
        return {n: n.grad for n in self.nodes if n.op_kind == "input"}


def tape_of(args: Iterable) -> Tape:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return Tape()


def lift(tape: Tape, x) -> Node:
    """Return ``x`` as a node on ``tape`` (arrays become constant leaves)."""
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ValueError(f"operand {x!r} belongs to another tape")
        return x
    return tape.constant(x)


def apply(op_kind: str, inputs: Sequence, **attrs) -> Node:
    """Apply an op on the tape of the first node operand (or a fresh tape)."""
    return tape_of(inputs).apply(op_kind, inputs, **attrs)


def matmul(a, b) -> Node:
    return apply("matmul", [a, b])


def add(a, b) -> Node:
    return apply("add", [a, b])


def hadamard(a, b) -> Node:
    return apply("hadamard", [a, b])


def sigmoid(x) -> Node:
    return apply("sigmoid", [x])


def tanh(x) -> Node:
    return apply("tanh", [x])


def concat(xs: Sequence, axis: int = 0) -> Node:
    return apply("concat", list(xs), axis=axis)


def slice_(x, start: int, stop: int, axis: int = 0) -> Node:
    return apply("slice", [x], start=start, stop=stop, axis=axis)


def scale(x, factor: float) -> Node:
    return apply("scale", [x], factor=float(factor))


def sum_(x, axis: Optional[int] = None) -> Node:
    return apply("sum", [x], axis=axis)


def sq_norm(x) -> Node:
    return apply("sq_norm", [x])


def sub(a, b) -> Node:
    tape = tape_of([a, b])
    return add(lift(tape, a), scale(lift(tape, b), -1.0))


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def grad_check(
    fn: Callable[[List[Node]], Node],
    params: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    Args:
        fn: Builds a scalar node from a list of parameter nodes (all on one tape).
        params: Parameter arrays at which to evaluate.
        eps: Finite-difference step.

    Returns:
        max over entries of ``|analytic - numeric| / max(1, |analytic| + |numeric|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]

    def evaluate(arrays):
        tape = Tape()
        nodes = [tape.input(a) for a in arrays]
        out = fn(nodes)
        if not isinstance(out, Node):
            out = tape.input(out)
        val = float(np.asarray(out.value).reshape(-1)[0]) if out.value.size == 1 else None
        if val is None:
            raise ShapeError(f"grad_check: fn must return a scalar, got {out.value.shape}")
        if not np.isfinite(val):
            raise FloatingPointError("grad_check: fn produced a non-finite value")
        return tape, nodes, out, val

    tape, nodes, out, _ = evaluate(params)
    tape.backward(out)
    analytic = [n.grad.copy() for n in nodes]

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = evaluate(params)[3]
            flat[j] = orig - eps
            fm = evaluate(params)[3]
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[i].reshape(-1)[j]
            err = abs(a - numeric) / max(1.0, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
