"""Small dense-matrix helpers.

Matrices are plain 2-D ``float64`` numpy arrays. The helpers only add the
shape checks and the overflow-safe softmax the rest of the package relies on.
"""

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hadamard(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"element-wise product needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def row_softmax(e) -> np.ndarray:
    """Softmax along the last axis, shifted by the row maximum.

    Works on any array with at least one dimension; for a matrix every row
    of the result is non-negative and sums to one.
    """
    e = np.asarray(e, dtype=np.float64)
    z = np.exp(e - e.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def log_softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))
