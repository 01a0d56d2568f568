#!/usr/bin/env python
"""
kernels.py: Dense linear-algebra helpers shared by every trainable module.

All functions are pure: they never modify their inputs.
"""

import numpy as np
import numpy.typing as npt

from reviewgraph.exceptions import ShapeError

DenseMatrix = npt.NDArray[np.float64]


def check_finite(array: np.ndarray, name: str = "array") -> None:
    """Checks that every entry of ``array`` is finite.

    Raises:
        ValueError: If any entry is NaN or infinite.
    """
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains non-finite values")


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Matrix product of two 2-d arrays.

    Args:
        a: Array of shape (n, k).
        b: Array of shape (k, m).

    Returns:
        The (n, m) product.

    Raises:
        ShapeError: If the inner dimensions differ or an input is not 2-d.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d inputs, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(x: DenseMatrix, axis: int = -1) -> DenseMatrix:
    """Numerically stable softmax along ``axis`` (rows by default).

    The maximum along ``axis`` is subtracted before exponentiating, so inputs
    of any finite magnitude are safe.
    """
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)
