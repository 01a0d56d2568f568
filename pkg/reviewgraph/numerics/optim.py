#!/usr/bin/env python
"""
optim.py: Adam with decoupled weight decay.

The update for every parameter array is

    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g**2
    theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)

with the usual bias corrections ``m_hat = m / (1 - beta1**t)`` and
``v_hat = v / (1 - beta2**t)``.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from reviewgraph.exceptions import ShapeError
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)


@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError(f"invalid learning rate: {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"invalid betas: ({self.beta1}, {self.beta2})")
        if self.eps < 0 or self.weight_decay < 0:
            raise ValueError("eps and weight_decay must be non-negative")

    def hyperparameters(self) -> Dict[str, float]:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "weight_decay": self.weight_decay,
        }


def adamw_step(
    state: AdamWState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
) -> AdamWState:
    """Applies one AdamW update in place.

    Only parameters present in ``grads`` are updated; every parameter keeps
    its own moment buffers, created on first use.

    Args:
        state: Optimizer state, mutated in place.
        params: Named parameter arrays, updated in place.
        grads: Named gradients, same shapes as the parameters.

    Returns:
        The same ``state`` with ``step`` incremented.

    Raises:
        ShapeError: If a gradient does not match its parameter.
        KeyError: If a gradient has no matching parameter.
    """
    for name, grad in grads.items():
        if params[name].shape != grad.shape:
            raise ShapeError(
                f"gradient {name} has shape {grad.shape}, "
                f"parameter has {params[name].shape}"
            )

    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    for name, grad in grads.items():
        theta = params[name]
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        theta -= state.lr * (update + state.weight_decay * theta)
    logger.debug("AdamW step %d on %d parameters", state.step, len(grads))
    return state
