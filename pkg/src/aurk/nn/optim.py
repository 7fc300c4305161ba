"""Momentum SGD with L2 weight decay and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aurk.nn.ops import Param

BASE_LR = 0.001
MOMENTUM = 0.9
WEIGHT_DECAY = 0.0005
LR_DECAY = 0.1
LR_STEP_EPOCHS = 10


def lr_schedule(epoch: int, base_lr: float = BASE_LR, factor: float = LR_DECAY,
                step: int = LR_STEP_EPOCHS) -> float:
    """``base_lr * factor ** (epoch // step)``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * factor ** (epoch // step)


@dataclass
class OptimState:
    velocity: dict = field(default_factory=dict)  # param name -> array
    lr: float = BASE_LR
    momentum: float = MOMENTUM
    weight_decay: float = WEIGHT_DECAY
    epoch: int = 0
    step_count: int = 0


def sgd_momentum_step(params: dict[str, Param], state: OptimState, grads: dict | None = None) -> None:
    """In-place heavy-ball update of every parameter.

    ``v <- mu*v - lr*(g + wd*p)``; ``p <- p + v``. Gradients default to each
    ``Param.grad``.
    """
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.value)
        elif v.shape != p.value.shape:
            raise ValueError(f"velocity for {name} has shape {v.shape}, parameter {p.value.shape}")
        v = state.momentum * v - state.lr * (g + state.weight_decay * p.value)
        state.velocity[name] = v
        p.value += v
    state.step_count += 1
