"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..exceptions import NonFiniteOutputError, NotScalarError
from .tensor import GradTape, Tensor, backward


def relative_error(analytic, numeric) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               coords: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Largest relative error between the tape gradient of ``f`` at ``x`` and
    central differences.

    ``f`` must return a scalar tensor and may read ``x`` through a closure
    (handy for model parameters). When ``coords`` is given only that many
    randomly chosen coordinates are perturbed.
    """
    if not x.requires_grad:
        x.requires_grad = True
    saved_grad = x.grad
    x.grad = None
    with GradTape() as tape:
        out = f(x)
    if out.data.size != 1:
        raise NotScalarError(f"grad_check needs a scalar function, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteOutputError("function value is not finite")
    backward(out, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else np.array(x.grad, dtype=np.float64)
    x.grad = saved_grad

    flat = x.data.reshape(-1)
    if coords is None or coords >= flat.size:
        idx = np.arange(flat.size)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = rng.choice(flat.size, size=coords, replace=False)
    numeric = np.empty(len(idx))
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteOutputError(f"non-finite function value perturbing coordinate {i}")
        numeric[n] = (hi - lo) / (2.0 * eps)
    return float(relative_error(analytic.reshape(-1)[idx], numeric).max(initial=0.0))
