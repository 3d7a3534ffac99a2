"""
Dense complex matrix kernels.
Factorizations, eigensolvers and norms consumed by every service.
"""

import logging
import warnings
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import get_settings
from app.models.operators import EigenDecomposition
from app.utils.errors import SingularMatrixError
from app.utils.validators import as_matrix, require_same_shape, require_square

logger = logging.getLogger(__name__)


def rank_tolerance(largest: float, shape: Tuple[int, int], factor: Optional[float] = None) -> float:
    """Numerical-rank threshold factor·σmax·max(rows, cols)."""
    if factor is None:
        factor = get_settings().RANK_TOL
    return factor * largest * max(shape)


def svd(matrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Thin singular value decomposition M = U·diag(s)·V*.

    Args:
        matrix: Finite complex matrix

    Returns:
        (left frame U, singular values descending, right frame V)
    """
    m = as_matrix(matrix, "M")
    left, values, right_h = sla.svd(m, full_matrices=False, lapack_driver="gesvd")
    return left, values, right_h.conj().T


def singular_values(matrix) -> np.ndarray:
    """Singular values, descending."""
    m = as_matrix(matrix, "M", allow_empty_cols=True)
    if m.shape[1] == 0:
        return np.zeros(0)
    return sla.svdvals(m)


def norm2(matrix) -> float:
    """Spectral norm as the largest singular value."""
    values = singular_values(matrix)
    return float(values[0]) if values.size else 0.0


def smallest_singular_value(matrix) -> float:
    """Smallest of the min(rows, cols) singular values."""
    values = singular_values(matrix)
    return float(values[-1]) if values.size else 0.0


def numerical_rank(values: np.ndarray, shape: Tuple[int, int]) -> int:
    """Count singular values above the rank threshold."""
    if values.size == 0 or values[0] == 0.0:
        return 0
    return int(np.sum(values > rank_tolerance(float(values[0]), shape)))


def _normalize_columns(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=0)
    norms[norms == 0.0] = 1.0
    return vectors / norms


def eig_dense(matrix, left: bool = False) -> EigenDecomposition:
    """
    Eigen decomposition of a square matrix (QR iteration on Hessenberg form).

    Args:
        matrix: Square complex matrix
        left: Also return left eigenvectors (y* M = λ y*)

    Returns:
        EigenDecomposition with unit-norm vectors
    """
    m = as_matrix(matrix, "M")
    require_square(m, "M")

    if left:
        values, left_vectors, right_vectors = sla.eig(m, left=True, right=True)
        left_vectors = _normalize_columns(left_vectors)
    else:
        values, right_vectors = sla.eig(m)
        left_vectors = None
    right_vectors = _normalize_columns(right_vectors)

    scale = max(norm2(m), 1.0)
    residual = np.linalg.norm(m @ right_vectors - right_vectors * values, axis=0)
    if residual.size and residual.max() > 1e-10 * scale:
        logger.warning(f"eig_dense residual {residual.max():.2e} above 1e-10·‖M‖")

    return EigenDecomposition(values=values, right_vectors=right_vectors, left_vectors=left_vectors)


def eig_generalized(a_matrix, b_matrix) -> EigenDecomposition:
    """
    Solve A y = λ B y by the QZ algorithm.

    Args:
        a_matrix: Square stiffness-type matrix
        b_matrix: Square, invertible mass-type matrix

    Returns:
        EigenDecomposition of the pencil with unit-norm vectors

    Raises:
        SingularMatrixError: If B is numerically singular
    """
    a = as_matrix(a_matrix, "A")
    b = as_matrix(b_matrix, "B")
    require_square(a, "A")
    require_same_shape(a, b)

    b_values = sla.svdvals(b)
    if b_values[0] == 0.0 or b_values[-1] <= get_settings().SINGULAR_TOL * b_values[0]:
        raise SingularMatrixError(
            "Mass matrix of the pencil is singular",
            smallest_singular_value=float(b_values[-1]),
            norm=float(b_values[0]),
        )

    values, vectors = sla.eig(a, b)
    vectors = _normalize_columns(vectors)

    scale = norm2(a) + float(b_values[0])
    residual = np.linalg.norm(a @ vectors - (b @ vectors) * values, axis=0)
    if residual.max() > 1e-10 * scale:
        logger.warning(f"eig_generalized residual {residual.max():.2e} above 1e-10·(‖A‖+‖B‖)")

    return EigenDecomposition(values=values, right_vectors=vectors)


def solve_linear(a_matrix, rhs) -> np.ndarray:
    """
    Solve A X = RHS by LU with a LAPACK condition estimate.

    Raises:
        SingularMatrixError: If A is numerically singular (reports the condition estimate)
    """
    a = as_matrix(a_matrix, "A")
    require_square(a, "A")
    b = np.asarray(rhs, dtype=np.complex128)
    vector_rhs = b.ndim == 1
    b = as_matrix(b, "RHS")
    if b.shape[0] != a.shape[0]:
        raise SingularMatrixError("RHS row count does not match A", shape=b.shape)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=False)
    gecon, = sla.get_lapack_funcs(("gecon",), (lu,))
    rcond, _ = gecon(lu, np.linalg.norm(a, 1), norm="1")
    if not rcond > np.finfo(float).eps:
        condition = np.inf if rcond == 0 else 1.0 / rcond
        raise SingularMatrixError("Matrix is numerically singular", condition_estimate=condition)

    x = sla.lu_solve((lu, piv), b, check_finite=False)
    return x.reshape(-1) if vector_rhs else x


def weighted_norm(matrix, factor: np.ndarray) -> float:
    """
    Operator norm in the inner product G = R*R, given the Cholesky factor R.

    ‖M‖_G = ‖R M R⁻¹‖₂.
    """
    m = as_matrix(matrix, "M", allow_empty_cols=True)
    if m.shape[1] == 0:
        return 0.0
    right = sla.solve_triangular(factor, np.eye(factor.shape[0], dtype=np.complex128))
    return norm2(factor @ m @ right)


def frame_norm(vectors, factor: np.ndarray) -> float:
    """Norm of an n×k block acting from ℂ^k (Euclidean) into (ℂ^n, G)."""
    m = as_matrix(vectors, "X", allow_empty_cols=True)
    if m.shape[1] == 0:
        return 0.0
    return norm2(factor @ m)
