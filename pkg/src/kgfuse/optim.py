"""AdamW with decoupled weight decay.

Moments update with bias correction as usual; decay is applied directly to
the weights rather than through the gradient, so with zero gradients a
parameter shrinks by exactly (1 - lr * weight_decay) per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ValidationError
from .tensor import Parameters, Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def init(cls, params: Parameters) -> "AdamState":
        state = cls()
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def optimizer_step(params: Parameters, grads: dict[Tensor, np.ndarray],
                   state: AdamState, lr: float, weight_decay: float,
                   betas: tuple[float, float] = (0.9, 0.999),
                   eps: float = 1e-8) -> None:
    """One in-place AdamW update; parameters without a gradient still decay."""
    if lr <= 0 or eps <= 0:
        raise ValidationError("lr and eps must be positive")
    beta1, beta2 = betas
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, tensor in params.items():
        grad = grads.get(tensor)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        elif not np.all(np.isfinite(grad)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")
        if grad.shape != tensor.data.shape:
            raise ValidationError(
                f"gradient shape {grad.shape} does not match {name!r} {tensor.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        tensor.data -= lr * (update + weight_decay * tensor.data)
