"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` is a thin immutable wrapper around a contiguous numpy array.
Operations in :mod:`gasvsf.tensorcore.ops` record themselves on the innermost
active :class:`Tape` whenever one of their inputs requires a gradient; calling
:meth:`Tape.backward` then walks the recorded nodes in reverse order and
accumulates adjoints per tensor id.

Reduction order: every adjoint is accumulated in the reverse of recording
order, and for a node with several inputs in the order the inputs were given.
No step is parallel, so repeated runs on identical inputs are bit-identical.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_ids = itertools.count()
_local = threading.local()


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if check and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass
class Node:
    out: Tensor
    inputs: Sequence[Tensor]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str = ""


@dataclass
class Tape:
    """Single-owner record of differentiable operations.

    Use as a context manager; ops executed inside the ``with`` block are
    recorded. Tapes nest, the innermost one records.
    """

    nodes: list[Node] = field(default_factory=list)
    grads: dict[int, np.ndarray] = field(default_factory=dict)

    def __enter__(self) -> "Tape":
        stack = _stack()
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward, op: str = "") -> None:
        self.nodes.append(Node(out, tuple(inputs), backward, op))

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> dict[int, np.ndarray]:
        if seed is None:
            if loss.size != 1:
                raise ShapeError("backward() without a seed needs a scalar loss")
            seed = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {loss.id: np.asarray(seed, dtype=loss.dtype).reshape(loss.shape)}
        for node in reversed(self.nodes):
            g = grads.get(node.out.id)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"adjoint of {node.op} has shape {gi.shape}, expected {t.shape}")
                prev = grads.get(t.id)
                grads[t.id] = gi if prev is None else prev + gi
        self.grads = grads
        return grads

    def grad(self, t: Tensor) -> np.ndarray:
        g = self.grads.get(t.id)
        return np.zeros_like(t.data) if g is None else g


def _stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap an op output, check finiteness and record it on the active tape."""
    needs = any(t.requires_grad for t in inputs)
    try:
        out = Tensor(data, requires_grad=needs)
    except NonFiniteError as exc:
        raise NonFiniteError(f"{op} produced non-finite values") from exc
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(out, inputs, backward, op)
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)
