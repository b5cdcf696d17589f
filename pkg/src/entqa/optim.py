"""Adam with decoupled weight decay, operating on named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradientError, Tensor


@dataclass
class AdamState:
    """Per-parameter moment buffers plus the shared hyperparameters."""

    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def _ensure(self, name: str, data: np.ndarray):
        if name not in self.first_moment:
            self.first_moment[name] = np.zeros_like(data)
            self.second_moment[name] = np.zeros_like(data)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float | None = None):
    """One in-place update of every parameter that has a gradient.

    `lr` overrides state.lr for this step (scheduled learning rates).
    Weight decay is decoupled: it scales with the effective lr and is
    applied even to zero-gradient parameters.
    """
    if lr is None:
        lr = state.lr
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in parameter '{name}'")
        state._ensure(name, p.data)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
