"""
Input validation utilities for dense numerical inputs.
Provides checks shared by every service; failures raise LabError subclasses.
"""

from typing import Optional, Sequence

import numpy as np

from app.utils.errors import (
    NonFiniteInputError,
    NotIdempotentError,
    ShapeError,
)


def as_matrix(value, name: str = "matrix", allow_empty_cols: bool = False) -> np.ndarray:
    """
    Coerce input to a finite complex 2-D array.

    Args:
        value: Array-like input
        name: Name used in error details
        allow_empty_cols: Accept n×0 frames (empty subspaces)

    Returns:
        complex128 array with two dimensions

    Raises:
        ShapeError: If the input is not two-dimensional or is empty
        NonFiniteInputError: If any entry is NaN or infinite
    """
    array = np.asarray(value, dtype=np.complex128)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise ShapeError(f"{name} must be two-dimensional", ndim=array.ndim)
    rows, cols = array.shape
    if rows < 1 or (cols < 1 and not allow_empty_cols):
        raise ShapeError(f"{name} must have at least one row and column", shape=array.shape)
    if not np.all(np.isfinite(array)):
        raise NonFiniteInputError(f"{name} contains NaN or Inf entries")
    return array


def as_vector(value, name: str = "vector") -> np.ndarray:
    """Coerce input to a finite complex 1-D array."""
    array = np.asarray(value, dtype=np.complex128).reshape(-1)
    if array.size == 0:
        raise ShapeError(f"{name} must not be empty")
    if not np.all(np.isfinite(array)):
        raise NonFiniteInputError(f"{name} contains NaN or Inf entries")
    return array


def require_square(matrix: np.ndarray, name: str = "matrix") -> None:
    """Raise ShapeError unless the matrix is square."""
    if matrix.shape[0] != matrix.shape[1]:
        raise ShapeError(f"{name} must be square", shape=matrix.shape)


def require_same_shape(first: np.ndarray, second: np.ndarray, names: Sequence[str] = ("A", "B")) -> None:
    """Raise ShapeError unless both matrices share a shape."""
    if first.shape != second.shape:
        raise ShapeError(
            f"{names[0]} and {names[1]} must have the same shape",
            shapes=(first.shape, second.shape),
        )


def require_rows(matrix: np.ndarray, rows: int, name: str = "matrix") -> None:
    """Raise ShapeError unless the matrix has the given number of rows."""
    if matrix.shape[0] != rows:
        raise ShapeError(f"{name} must have {rows} rows", shape=matrix.shape)


def require_idempotent(matrix: np.ndarray, tol: float, scale: Optional[float] = None) -> None:
    """
    Check Z² = Z up to tol·scale.

    Raises:
        NotIdempotentError: With the observed defect
    """
    if scale is None:
        scale = max(float(np.linalg.norm(matrix, 2)), 1.0)
    defect = float(np.linalg.norm(matrix @ matrix - matrix, 2))
    if defect > tol * scale:
        raise NotIdempotentError(
            "Matrix is not idempotent",
            defect=defect,
            allowed=tol * scale,
        )


def validate_h(h: float) -> None:
    """Mesh parameters for the sine model live in (0, 1/2]."""
    if not 0.0 < h <= 0.5:
        raise ShapeError("Mesh parameter h must satisfy 0 < h <= 1/2", h=h)
