"""AdamW with decoupled weight decay and bias-corrected moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class OptState:
    """Per-parameter moment buffers plus hyperparameters."""

    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01


def init_opt_state(params: dict[str, Tensor], **hyper) -> OptState:
    return OptState(
        first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
        **hyper,
    )


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptState,
) -> tuple[dict[str, Tensor], OptState]:
    """Apply one decoupled-weight-decay adaptive-moment update in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    lr, b1, b2 = state.learning_rate, state.beta1, state.beta2

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= lr * (mhat / (np.sqrt(vhat) + state.epsilon) + state.weight_decay * p.data)
    return params, state
