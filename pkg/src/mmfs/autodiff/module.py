"""Minimal parameter container with hierarchical naming."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Parameter


class Module:
    """Walks its attributes to find parameters, buffers and child modules.

    Attributes are visited in assignment order, so parameter names and
    checkpoint layout are stable across runs.
    """

    training = False

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield key, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{key}.{i}", v

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Parameter]":
        out: OrderedDict[str, Parameter] = OrderedDict()
        for key, value in self._children():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = name
                out[name] = value
            else:
                out.update(value.named_parameters(prefix=name + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (e.g. batch-norm running statistics)."""
        return {}

    def named_buffers(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for key, value in self.buffers().items():
            out[f"{prefix}{key}"] = value
        for key, value in self._children():
            if isinstance(value, Module):
                out.update(value.named_buffers(prefix=f"{prefix}{key}."))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise KeyError(name)

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Copies of every parameter and buffer, parameters first."""
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters().items():
            state[name] = p.data.copy()
        for name, b in self.named_buffers().items():
            state[name] = b.copy()
        return state

    def load_state_dict(self, state) -> None:
        params = self.named_parameters()
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.shape}")
            p.data = value.copy()
        owners = {}
        for m_name, m in self._named_modules():
            for b_name in m.buffers():
                owners[f"{m_name}{b_name}"] = (m, b_name)
        for name, (m, b_name) in owners.items():
            m.set_buffer(b_name, np.asarray(state[name], dtype=np.float64).copy())

    def _named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, value in self._children():
            if isinstance(value, Module):
                yield from value._named_modules(prefix=f"{prefix}{key}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())
