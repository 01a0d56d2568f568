#!/usr/bin/env python
"""
mlp.py: Two-layer perceptron with a hand-written backward pass.

Rows are samples: ``x`` has shape (batch, input_dim), or (input_dim,) for a
single sample. Weights follow the ``(out, in)`` convention, so

    y = relu(x @ w1.T + b1) @ w2.T + b2
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from reviewgraph.exceptions import ShapeError


@dataclass
class MlpParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Checks the input -> hidden -> output shape chain.

        Raises:
            ShapeError: If the shapes are inconsistent.
            ValueError: If the activation is unknown or a value is non-finite.
        """
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        hidden, _ = self.w1.shape
        output, hidden2 = self.w2.shape
        if self.b1.shape != (hidden,) or hidden2 != hidden:
            raise ShapeError("w1/b1/w2 disagree on the hidden width")
        if self.b2.shape != (output,):
            raise ShapeError("w2/b2 disagree on the output width")
        for name, value in self.parameters().items():
            if not np.all(np.isfinite(value)):
                raise ValueError(f"MLP parameter {name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def init(
        cls, input_dim: int, hidden_dim: int, output_dim: int, rng: np.random.Generator
    ) -> "MlpParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
        bound1 = 1.0 / np.sqrt(input_dim)
        bound2 = 1.0 / np.sqrt(hidden_dim)
        return cls(
            w1=rng.uniform(-bound1, bound1, size=(hidden_dim, input_dim)),
            b1=rng.uniform(-bound1, bound1, size=hidden_dim),
            w2=rng.uniform(-bound2, bound2, size=(output_dim, hidden_dim)),
            b2=rng.uniform(-bound2, bound2, size=output_dim),
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def squared_norm(self) -> float:
        return float(sum(np.sum(p * p) for p in self.parameters().values()))


@dataclass
class MlpCache:
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    squeeze: bool


@dataclass
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def mlp_forward(p: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, MlpCache]:
    """Forward pass.

    Args:
        p: MLP parameters.
        x: Input of shape (input_dim,) or (batch, input_dim).

    Returns:
        Output ``y`` (same leading shape as ``x``) and the cache that
        :func:`mlp_backward` needs.

    Raises:
        ShapeError: If ``x`` does not match the input width.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    batch = np.atleast_2d(x)
    if batch.ndim != 2 or batch.shape[1] != p.input_dim:
        raise ShapeError(f"expected input width {p.input_dim}, got shape {x.shape}")
    pre = batch @ p.w1.T + p.b1
    hidden = np.maximum(pre, 0.0)
    y = hidden @ p.w2.T + p.b2
    return (y[0] if squeeze else y), MlpCache(batch, pre, hidden, squeeze)


def mlp_backward(
    p: MlpParams, cache: MlpCache, grad_y: np.ndarray
) -> Tuple[MlpGrads, np.ndarray]:
    """Backward pass for :func:`mlp_forward`.

    Gradients are summed over the batch.

    Returns:
        Parameter gradients and the gradient with respect to the input.

    Raises:
        ShapeError: If the cache or ``grad_y`` does not match ``p``.
    """
    grad_y = np.atleast_2d(np.asarray(grad_y, dtype=np.float64))
    if cache.pre.shape[1] != p.hidden_dim or cache.x.shape[1] != p.input_dim:
        raise ShapeError("cache was produced by an MLP of a different shape")
    if grad_y.shape != (cache.x.shape[0], p.output_dim):
        raise ShapeError(
            f"grad_y shape {grad_y.shape} does not match output "
            f"({cache.x.shape[0]}, {p.output_dim})"
        )
    grad_w2 = grad_y.T @ cache.hidden
    grad_b2 = grad_y.sum(axis=0)
    grad_hidden = grad_y @ p.w2
    grad_pre = grad_hidden * (cache.pre > 0.0)
    grad_w1 = grad_pre.T @ cache.x
    grad_b1 = grad_pre.sum(axis=0)
    grad_x = grad_pre @ p.w1
    grads = MlpGrads(w1=grad_w1, b1=grad_b1, w2=grad_w2, b2=grad_b2)
    return grads, (grad_x[0] if cache.squeeze else grad_x)
