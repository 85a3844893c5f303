"""Dense float64 tensors and a define-by-run tape for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


@dataclass
class Node:
    op: str
    parents: tuple[int, ...]
    shape: tuple[int, ...]
    backward: Optional[BackwardFn] = None


@dataclass
class Tape:
    """Append-only record of differentiable operations.

    Node ids are list positions, so every parent id is smaller than its
    child's id and a reverse sweep over ids is a valid topological order.
    """

    nodes: list[Node] = field(default_factory=list)

    @property
    def next_id(self) -> int:
        return len(self.nodes)

    def watch(self, value) -> "Tensor":
        """Register ``value`` as a leaf whose gradient will be reported."""
        data = _as_array(value)
        node_id = self.next_id
        self.nodes.append(Node("leaf", (), data.shape))
        return Tensor(data, self, node_id)

    def record(self, op: str, inputs: Sequence["Tensor"], out: np.ndarray,
               backward: BackwardFn) -> "Tensor":
        tracked = [t for t in inputs if t.tape is not None]
        if not tracked:
            return Tensor(out)
        for t in tracked:
            if t.tape is not self:
                raise ValueError(f"{op}: operands belong to different tapes")
        parents = tuple(-1 if t.tape is None else t.node for t in inputs)
        node_id = self.next_id
        self.nodes.append(Node(op, parents, out.shape, backward))
        return Tensor(out, self, node_id)


def _as_array(value) -> np.ndarray:
    data = np.array(value, dtype=np.float64)
    if data.ndim == 0:
        data = data.reshape(1)
    if not 1 <= data.ndim <= 3:
        raise ShapeError(f"tensors have 1 to 3 axes, got shape {data.shape}")
    return data


class Tensor:
    """A dense float64 array, optionally tied to a node on a :class:`Tape`."""

    __slots__ = ("data", "tape", "node")
    __array_priority__ = 1000

    def __init__(self, data, tape: Optional[Tape] = None, node: Optional[int] = None):
        self.data = data if isinstance(data, np.ndarray) and data.dtype == np.float64 \
            and 1 <= data.ndim <= 3 else _as_array(data)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.tracked else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar; the functional forms live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, 1.0 / float(other))
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Return d(loss)/d(leaf) for every leaf on ``tape``.

    Leaves the loss does not depend on map to zero tensors. Gradients from
    several consumers of one node are summed.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.data.size != 1 or loss.data.ndim > 2:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: list[Optional[np.ndarray]] = [None] * len(tape.nodes)
    grads[loss.node] = np.ones(loss.shape)
    for node_id in range(loss.node, -1, -1):
        g = grads[node_id]
        node = tape.nodes[node_id]
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if parent < 0 or pg is None:
                continue
            if grads[parent] is None:
                grads[parent] = np.array(pg, dtype=np.float64)
            else:
                grads[parent] += pg

    out = {}
    for node_id, node in enumerate(tape.nodes):
        if node.op == "leaf":
            g = grads[node_id]
            out[node_id] = Tensor(np.zeros(node.shape) if g is None else g)
    return out
