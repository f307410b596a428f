"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to its nodes in creation
order, so the node list is already topologically sorted.  Backward passes
walk it in reverse, accumulating cotangents.  Only the handful of primitives
needed for dense ReLU networks, the MSE loss and hinge penalties exist.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called with incompatible shapes or kinds."""


def _as_f64(x) -> np.ndarray:
    return np.array(x, dtype=np.float64)


@dataclass(eq=False)
class Node:
    tape: "Tape"
    index: int
    op: str
    parents: tuple[int, ...]
    value: np.ndarray
    # forward(*parent_values) -> value, backward(cotangent, *parent_values) -> parent cotangents
    forward: Callable | None = None
    backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # operator sugar, all routed through the owning tape
    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self) -> str:
        return f"Node(#{self.index}, {self.op}, shape={self.shape})"


class Tape:
    """Ordered record of primitive operations.

    Leaves are created with :meth:`param` (differentiable inputs) or
    :meth:`const`.  Every other node's parents have smaller indices.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, op, parents, value, forward=None, backward=None) -> Node:
        node = Node(self, len(self.nodes), op, tuple(p.index for p in parents),
                    value, forward, backward)
        self.nodes.append(node)
        return node

    def _own(self, x) -> Node:
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractError("node belongs to a different tape")
            return x
        return self.const(x)

    # -- leaves ---------------------------------------------------------
    def param(self, value) -> Node:
        return self._push("param", (), _as_f64(value))

    def const(self, value) -> Node:
        return self._push("const", (), _as_f64(value))

    # -- primitives -----------------------------------------------------
    def matmul(self, a, b) -> Node:
        a, b = self._own(a), self._own(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ContractError(f"matmul shapes {a.shape} @ {b.shape}")
        return self._push(
            "matmul", (a, b), a.value @ b.value,
            lambda x, y: x @ y,
            lambda g, x, y: (g @ y.T, x.T @ g),
        )

    def add(self, a, b) -> Node:
        """Elementwise sum; ``b`` may be a row vector broadcast over rows of ``a``."""
        a, b = self._own(a), self._own(b)
        if a.shape == b.shape:
            back = lambda g, x, y: (g, g)
        elif a.value.ndim == 2 and b.value.ndim == 1 and b.shape[0] == a.shape[1]:
            back = lambda g, x, y: (g, g.sum(axis=0))
        elif b.value.ndim == 0:
            back = lambda g, x, y: (g, np.asarray(g.sum()))
        else:
            raise ContractError(f"add shapes {a.shape} + {b.shape}")
        return self._push("add", (a, b), a.value + b.value, lambda x, y: x + y, back)

    def transpose(self, a) -> Node:
        a = self._own(a)
        if a.value.ndim != 2:
            raise ContractError(f"transpose needs a matrix, got {a.shape}")
        return self._push("transpose", (a,), a.value.T.copy(),
                          lambda x: x.T.copy(), lambda g, x: (g.T.copy(),))

    def sub(self, a, b) -> Node:
        a, b = self._own(a), self._own(b)
        if a.shape != b.shape:
            raise ContractError(f"sub shapes {a.shape} - {b.shape}")
        return self._push("sub", (a, b), a.value - b.value,
                          lambda x, y: x - y, lambda g, x, y: (g, -g))

    def relu(self, a) -> Node:
        a = self._own(a)
        # subgradient at exactly 0 is 0
        return self._push("relu", (a,), np.maximum(a.value, 0.0),
                          lambda x: np.maximum(x, 0.0),
                          lambda g, x: (g * (x > 0.0),))

    def square(self, a) -> Node:
        a = self._own(a)
        return self._push("square", (a,), a.value * a.value,
                          lambda x: x * x, lambda g, x: (2.0 * x * g,))

    def scale(self, a, k) -> Node:
        """Multiply by a constant scalar or a constant array broadcastable to ``a``."""
        a = self._own(a)
        k = _as_f64(k)
        if np.broadcast_shapes(a.shape, k.shape) != a.shape:
            raise ContractError(f"scale {k.shape} does not broadcast onto {a.shape}")
        return self._push("scale", (a,), a.value * k,
                          lambda x: x * k, lambda g, x: (_unbroadcast(g * k, x.shape),))

    def sum(self, a) -> Node:
        a = self._own(a)
        return self._push("sum", (a,), np.asarray(a.value.sum()),
                          lambda x: np.asarray(x.sum()),
                          lambda g, x: (np.full(x.shape, float(g)),))

    def mean(self, a) -> Node:
        a = self._own(a)
        size = a.value.size
        if size == 0:
            raise ContractError("mean of an empty tensor")
        return self._push("mean", (a,), np.asarray(a.value.sum() / size),
                          lambda x: np.asarray(x.sum() / size),
                          lambda g, x: (np.full(x.shape, float(g) / size),))

    # -- replay ---------------------------------------------------------
    def replay(self) -> list[np.ndarray]:
        """Recompute every node value from the leaves and return them."""
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.forward is None:
                values.append(node.value)
            else:
                values.append(node.forward(*(values[p] for p in node.parents)))
        return values


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


@dataclass(frozen=True)
class GradientVector:
    """Per-parameter gradient blocks, in the same order as the parameter set."""

    blocks: tuple[np.ndarray, ...]

    @property
    def global_l2_norm(self) -> float:
        return global_norm(self)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [b.shape for b in self.blocks]

    def flat(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([b.ravel() for b in self.blocks])

    def scaled(self, k: float) -> "GradientVector":
        return GradientVector(tuple(b * k for b in self.blocks))

    def __add__(self, other: "GradientVector") -> "GradientVector":
        if self.shapes != other.shapes:
            raise ContractError("gradient vectors have different layouts")
        return GradientVector(tuple(a + b for a, b in zip(self.blocks, other.blocks)))

    def is_zero(self) -> bool:
        return all(not b.any() for b in self.blocks)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "GradientVector":
        return cls(tuple(np.zeros(np.shape(p)) for p in params))


def global_norm(g: GradientVector) -> float:
    """L2 norm of all blocks concatenated."""
    # scaled two-pass sum keeps tiny and huge entries from under/overflowing
    if not all(np.all(np.isfinite(b)) for b in g.blocks):
        return math.nan if any(np.any(np.isnan(b)) for b in g.blocks) else math.inf
    peak = max((float(np.abs(b).max()) for b in g.blocks if b.size), default=0.0)
    if peak == 0.0:
        return 0.0
    total = sum(float(np.sum((b / peak) ** 2)) for b in g.blocks)
    return peak * float(np.sqrt(total))


def vjp(tape: Tape, output: Node, cotangent, params: Sequence[Node]) -> GradientVector:
    """Pull ``cotangent`` back from ``output`` to each node in ``params``."""
    if output.tape is not tape:
        raise ContractError("output node is not on this tape")
    seed = _as_f64(cotangent)
    if seed.shape != output.shape:
        raise ContractError(f"cotangent shape {seed.shape} != output shape {output.shape}")
    for p in params:
        if p.tape is not tape:
            raise ContractError("parameter node is not on this tape")

    cot: dict[int, np.ndarray] = {output.index: seed}
    nodes = tape.nodes
    for i in range(output.index, -1, -1):
        g = cot.pop(i, None) if nodes[i].backward is not None else cot.get(i)
        node = nodes[i]
        if g is None or node.backward is None:
            continue
        parent_vals = [nodes[p].value for p in node.parents]
        for p, pg in zip(node.parents, node.backward(g, *parent_vals)):
            if p in cot:
                cot[p] = cot[p] + pg
            else:
                cot[p] = pg
    return GradientVector(tuple(
        np.array(cot[p.index], dtype=np.float64) if p.index in cot else np.zeros(p.shape)
        for p in params
    ))


def grad(tape: Tape, loss: Node, params: Sequence[Node]) -> GradientVector:
    """Gradient of a scalar ``loss`` node with respect to ``params``."""
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ContractError(f"grad needs a scalar loss, got shape {loss.shape}")
    return vjp(tape, loss, np.ones(loss.shape), params)
