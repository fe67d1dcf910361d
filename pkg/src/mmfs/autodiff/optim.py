"""Adam with decoupled weight decay."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from ..exceptions import MissingGradError
from .tensor import Parameter


def adam_step(params: Iterable[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """Update ``params`` in place from their ``.grad`` and reset the grads to zero."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise MissingGradError(f"parameter {p.name or '<unnamed>'} has no gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - beta2 ** p.step_count)
        update = m_hat / (np.sqrt(v_hat) + eps)
        if weight_decay:
            update = update + weight_decay * p.data
        p.data = p.data - lr * update
        p.zero_grad()
