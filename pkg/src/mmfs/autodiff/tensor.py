"""Dense float64 tensors and an explicit reverse-mode gradient tape.

Operations only record onto a tape while one is active::

    with GradTape() as tape:
        loss = cross_entropy_loss(model(x), y)
    backward(loss, tape)

Outside a tape every operation is a plain numpy computation, which is how
inference runs.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from ..exceptions import DetachedTensorError, NotScalarError, SecondOrderError

_ACTIVE_TAPES: list["GradTape"] = []


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape_id: Optional[int] = None
        self._tape: Optional[GradTape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class Parameter(Tensor):
    """A trainable tensor carrying its own Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, data, name: str = ""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Node(NamedTuple):
    kind: str
    output: Tensor
    inputs: tuple
    backward_fn: Callable


class GradTape:
    """Append-only record of differentiable operations.

    Reverse append order is a valid topological order because an
    operation can only consume tensors that already exist.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, kind: str, output: Tensor, inputs: Sequence[Tensor], backward_fn: Callable):
        if self.consumed:
            raise SecondOrderError("cannot record onto a tape that has already been differentiated")
        output.tape_id = len(self.nodes)
        output._tape = self
        self.nodes.append(Node(kind, output, tuple(inputs), backward_fn))

    def __len__(self):
        return len(self.nodes)


def active_tape() -> Optional[GradTape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(kind: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` and register ``backward_fn`` if any input needs a gradient.

    ``backward_fn(grad_out)`` returns one gradient (or None) per input.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(kind, out, inputs, backward_fn)
        return out
    return Tensor(data)


def backward(loss: Tensor, tape: Optional[GradTape] = None) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape."""
    if loss.data.size != 1:
        raise NotScalarError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = loss._tape
    if loss._tape is None or loss._tape is not tape:
        raise DetachedTensorError("loss was not produced on the given tape")
    if tape.consumed:
        raise SecondOrderError("tape already differentiated; higher-order gradients are not supported")
    tape.consumed = True

    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        g = node.output.grad
        if g is None:
            continue
        grads = node.backward_fn(g)
        for inp, ig in zip(node.inputs, grads):
            if ig is None or not inp.requires_grad:
                continue
            # never accumulate in place: backward functions may return views of g
            inp.grad = ig if inp.grad is None else inp.grad + ig
