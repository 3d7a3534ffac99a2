"""
Numpy-backed domain types.
Operators, inner products, subspaces, contours and Krylov state shared by the services.
"""

from typing import Any, List, Literal, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator

from app.config import get_settings
from app.utils.validators import as_matrix


class EigenDecomposition(BaseModel):
    """Eigenvalues with unit-norm right (and optionally left) eigenvectors."""

    values: np.ndarray
    right_vectors: np.ndarray
    left_vectors: Optional[np.ndarray] = None

    class Config:
        arbitrary_types_allowed = True

    @field_validator('values', mode='before')
    @classmethod
    def coerce_values(cls, v: Any) -> np.ndarray:
        return np.asarray(v, dtype=np.complex128).reshape(-1)

    @field_validator('right_vectors', 'left_vectors', mode='before')
    @classmethod
    def coerce_vectors(cls, v: Any) -> Optional[np.ndarray]:
        if v is None:
            return None
        return as_matrix(v, "eigenvectors")

    @model_validator(mode='after')
    def check_counts(self) -> 'EigenDecomposition':
        if self.right_vectors.shape[1] != self.values.size:
            raise ValueError("right_vectors must have one column per eigenvalue")
        if self.left_vectors is not None and self.left_vectors.shape != self.right_vectors.shape:
            raise ValueError("left_vectors must match right_vectors in shape")
        return self

    def __len__(self) -> int:
        return int(self.values.size)


class Gram(BaseModel):
    """Hermitian positive definite matrix defining an inner product ⟨x, y⟩ = x* G y."""

    matrix: np.ndarray
    label: Literal["H", "V", "Euclidean"] = "Euclidean"

    _factor: np.ndarray = PrivateAttr()

    class Config:
        arbitrary_types_allowed = True

    @field_validator('matrix', mode='before')
    @classmethod
    def validate_matrix(cls, v: Any) -> np.ndarray:
        """Require a Hermitian positive definite matrix."""
        g = as_matrix(v, "Gram")
        if g.shape[0] != g.shape[1]:
            raise ValueError("Gram matrix must be square")
        scale = max(float(np.max(np.abs(g))), 1.0)
        if np.max(np.abs(g - g.conj().T)) > get_settings().HERMITIAN_TOL * scale:
            raise ValueError("Gram matrix must be Hermitian")
        return 0.5 * (g + g.conj().T)

    def model_post_init(self, __context: Any) -> None:
        try:
            self._factor = sla.cholesky(self.matrix, lower=False)
        except sla.LinAlgError as exc:
            raise ValueError("Gram matrix must be positive definite") from exc

    @classmethod
    def identity(cls, n: int, label: str = "Euclidean") -> 'Gram':
        return cls(matrix=np.eye(n, dtype=np.complex128), label=label)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def factor(self) -> np.ndarray:
        """Upper Cholesky factor R with G = R*R."""
        return self._factor

    def inner(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x.conj().T @ self.matrix @ y

    def norm(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self._factor @ x))

    def same_as(self, other: 'Gram') -> bool:
        if self is other:
            return True
        return self.matrix.shape == other.matrix.shape and np.allclose(
            self.matrix, other.matrix, rtol=1e-13, atol=0.0
        )


class Subspace(BaseModel):
    """Column frame orthonormal with respect to a Gram."""

    frame: np.ndarray
    gram: Gram

    class Config:
        arbitrary_types_allowed = True

    @field_validator('frame', mode='before')
    @classmethod
    def coerce_frame(cls, v: Any) -> np.ndarray:
        return as_matrix(v, "frame", allow_empty_cols=True)

    @model_validator(mode='after')
    def check_orthonormal(self) -> 'Subspace':
        n, k = self.frame.shape
        if n != self.gram.n:
            raise ValueError("frame rows must match the Gram dimension")
        if k > n:
            raise ValueError("subspace dimension cannot exceed the ambient dimension")
        if k:
            defect = np.max(np.abs(self.gram.inner(self.frame, self.frame) - np.eye(k)))
            if defect > get_settings().ORTHONORMAL_TOL:
                raise ValueError(f"frame is not G-orthonormal (defect {defect:.2e})")
        return self

    @property
    def dim(self) -> int:
        return self.frame.shape[1]

    @property
    def n(self) -> int:
        return self.frame.shape[0]

    def projector(self) -> np.ndarray:
        """G-orthogonal projector onto the span."""
        return self.frame @ self.frame.conj().T @ self.gram.matrix


class Contour(BaseModel):
    """Circle in the complex plane with equispaced trapezoidal nodes."""

    center: complex
    radius: float = Field(..., gt=0, description="Circle radius")
    nodes: int = Field(32, ge=4, description="Quadrature node count q")

    class Config:
        arbitrary_types_allowed = True

    @field_validator('center', mode='before')
    @classmethod
    def coerce_center(cls, v: Any) -> complex:
        return complex(v)

    def points(self) -> np.ndarray:
        """Nodes z_j = center + radius·exp(2πij/q)."""
        angles = 2.0 * np.pi * np.arange(self.nodes) / self.nodes
        return self.center + self.radius * np.exp(1j * angles)

    @property
    def arc_length(self) -> float:
        return 2.0 * np.pi * self.radius

    @property
    def node_spacing(self) -> float:
        """Largest distance from a point of the circle to its nearest node."""
        return 2.0 * self.radius * np.sin(np.pi / (2 * self.nodes))

    def encloses(self, z) -> np.ndarray:
        return np.abs(np.asarray(z) - self.center) < self.radius

    def distance_to_circle(self, z) -> np.ndarray:
        return np.abs(np.abs(np.asarray(z) - self.center) - self.radius)


class ReferenceProblem(BaseModel):
    """Finite-dimensional stand-in for the operator A with its H and V inner products."""

    name: str = "reference"
    a_ref: np.ndarray
    gram_h: Gram
    gram_v: Gram
    a0_diag: Optional[np.ndarray] = None
    b_mat: Optional[np.ndarray] = None
    b_adjoint: Optional[np.ndarray] = None
    indices: Optional[List[Tuple[int, int]]] = None
    exact: Optional[EigenDecomposition] = None

    _inverse: Optional[np.ndarray] = PrivateAttr(default=None)

    class Config:
        arbitrary_types_allowed = True

    @field_validator('a_ref', mode='before')
    @classmethod
    def coerce_operator(cls, v: Any) -> np.ndarray:
        a = as_matrix(v, "A_ref")
        if a.shape[0] != a.shape[1]:
            raise ValueError("A_ref must be square")
        return a

    @field_validator('a0_diag', mode='before')
    @classmethod
    def coerce_a0(cls, v: Any) -> Optional[np.ndarray]:
        if v is None:
            return None
        values = np.asarray(v, dtype=float).reshape(-1)
        if np.any(values <= 0) or not np.all(np.isfinite(values)):
            raise ValueError("A0_diag must be positive and finite")
        return values

    @model_validator(mode='after')
    def check_structure(self) -> 'ReferenceProblem':
        n = self.a_ref.shape[0]
        if self.gram_h.n != n or self.gram_v.n != n:
            raise ValueError("Gram dimensions must match A_ref")
        if self.a0_diag is not None:
            if self.a0_diag.size != n:
                raise ValueError("A0_diag length must match A_ref")
            expected = self.a0_diag[:, None] * self.gram_h.matrix
            if not np.allclose(self.gram_v.matrix, expected, rtol=1e-12, atol=0.0):
                raise ValueError("gram_v must equal diag(A0_diag)·gram_h")
        return self

    @property
    def n(self) -> int:
        return self.a_ref.shape[0]

    def inverse(self) -> np.ndarray:
        """Dense T = A_ref⁻¹, computed once."""
        if self._inverse is None:
            from app.utils.densekit import solve_linear

            self._inverse = solve_linear(self.a_ref, np.eye(self.n, dtype=np.complex128))
        return self._inverse


class GalerkinSetup(BaseModel):
    """Trial/test frames with the assembled pencil (A_h, B_h)."""

    reference: ReferenceProblem
    trial: np.ndarray
    test: np.ndarray
    a_h: np.ndarray
    b_h: np.ndarray
    h: Optional[float] = None

    class Config:
        arbitrary_types_allowed = True

    @property
    def N(self) -> int:
        return self.trial.shape[1]

    @property
    def n(self) -> int:
        return self.reference.n


class DiscreteEigenpairs(BaseModel):
    """Pencil eigenpairs lifted to the ambient space, v_h = Φ y."""

    values: np.ndarray
    coefficients: np.ndarray
    vectors: np.ndarray

    class Config:
        arbitrary_types_allowed = True


class TargetEigenpair(BaseModel):
    """Isolated eigenvalue cluster with its right and left invariant subspaces."""

    value: complex
    cluster_values: np.ndarray
    U: Subspace
    Ustar: Subspace
    m: int = Field(..., ge=1)
    contour: Contour

    class Config:
        arbitrary_types_allowed = True

    @field_validator('value', mode='before')
    @classmethod
    def coerce_value(cls, v: Any) -> complex:
        return complex(v)


class Breakdown(BaseModel):
    """Termination record of a Krylov run."""

    step: int
    kind: Literal["happy", "serious"]
    reason: str


class KrylovRun(BaseModel):
    """
    Factored Krylov recursion state.

    V holds v_1..v_k (k = length, or length+1 when the next vector exists);
    projected is k×length (Hessenberg H or tridiagonal J with its subdiagonal row).
    betas[i] and gammas[i] store β_{i+2} and γ_{i+2}.
    """

    method: Literal["arnoldi", "bilanczos"]
    A: np.ndarray
    V: np.ndarray
    W: Optional[np.ndarray] = None
    projected: np.ndarray
    alphas: List[complex] = Field(default_factory=list)
    betas: List[float] = Field(default_factory=list)
    gammas: List[complex] = Field(default_factory=list)
    length: int = 0
    breakdown: Optional[Breakdown] = None
    # left residual s of the last step when the run stopped before w_{ℓ+1}
    left_residual: Optional[np.ndarray] = None

    class Config:
        arbitrary_types_allowed = True

    @property
    def has_next(self) -> bool:
        return self.V.shape[1] > self.length

    def beta(self, i: int) -> float:
        """β_i for i ≥ 2."""
        return self.betas[i - 2]

    def gamma(self, i: int) -> complex:
        """γ_i for i ≥ 2 (equals β_i for Arnoldi)."""
        if self.method == "arnoldi":
            return complex(self.betas[i - 2])
        return self.gammas[i - 2]

    def square(self, ell: int) -> np.ndarray:
        """Leading ℓ×ℓ block H_ℓ or J_ℓ."""
        return self.projected[:ell, :ell]

