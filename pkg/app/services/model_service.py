"""
Reference problem service.
Builds the sine-basis advection-diffusion operator on the unit square and
nonnormal bounded testbeds with known eigenpairs.
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.config import Settings, get_settings
from app.models.operators import EigenDecomposition, Gram, ReferenceProblem
from app.models.schemas import CoefficientTerm, ModelCoefficients
from app.utils import coefficients as coefficient_table
from app.utils import densekit
from app.utils.errors import QuadratureError, SizeLimitError, SpectraOverlapError
from app.utils.quadrature import composite_gauss_legendre
from app.utils.validators import validate_h

logger = logging.getLogger(__name__)

SineIndex = Tuple[int, int]


class ModelService:
    """Service for assembling reference problems."""

    def __init__(self, settings: Optional[Settings] = None):
        """Initialize with quadrature settings."""
        self.settings = settings or get_settings()

    # ------------------------------------------------------------------
    # sine basis
    # ------------------------------------------------------------------

    def sine_indices(self, h: float) -> List[SineIndex]:
        """
        All k = (k₁, k₂) with |k|·h < 1, sorted by (|k|, k₁).

        Args:
            h: Mesh parameter in (0, 1/2]

        Returns:
            Ordered index list; smaller h gives a superset
        """
        validate_h(h)
        indices = []
        total = 2
        while total * h < 1.0 - 1e-12:
            indices.extend((k1, total - k1) for k1 in range(1, total))
            total += 1
        return indices

    def count(self, h: float) -> int:
        """N(h)."""
        return len(self.sine_indices(h))

    @staticmethod
    def laplacian_eigenvalues(indices: Sequence[SineIndex]) -> np.ndarray:
        """λ⁰_k = (k₁² + k₂²)π²."""
        k = np.asarray(indices, dtype=float)
        return (k[:, 0] ** 2 + k[:, 1] ** 2) * math.pi ** 2

    def assemble_model(
        self,
        coeffs: ModelCoefficients,
        h_ref: Optional[float] = None,
    ) -> ReferenceProblem:
        """
        Reference operator A = −Δ + b·∇ + c in the L²-normalized sine basis.

        Args:
            coeffs: Advection field and potential as separable terms
            h_ref: Reference cutoff

        Returns:
            ReferenceProblem with G_H = I, G_V = diag(λ⁰), A_ref = diag(λ⁰) + B_mat

        Raises:
            SizeLimitError: If N(h_ref) exceeds the configured cap
            QuadratureError: If the quadrature has not converged
            CoefficientError: If b does not vanish on the boundary
        """
        h_ref = h_ref or self.settings.get_h_ref()
        coefficient_table.check_boundary(coeffs)
        indices = self.sine_indices(h_ref)
        n = len(indices)
        if n > self.settings.MAX_MODEL_DIM:
            raise SizeLimitError("Reference cutoff gives too many basis functions", n=n)

        logger.info(f"Assembling sine model '{coeffs.name}' with N_ref={n} (h_ref={h_ref:.5f})")
        lambda0 = self.laplacian_eigenvalues(indices)
        b_mat = self.assemble_perturbation(coeffs, indices)
        b_adjoint = self.assemble_adjoint(coeffs, indices)

        skew = float(np.max(np.abs(b_adjoint - b_mat.conj().T))) if n else 0.0
        if skew > 1e-8 * max(1.0, float(np.max(np.abs(b_mat)))):
            logger.warning(f"Adjoint assembly deviates from B_mat* by {skew:.2e}")

        return ReferenceProblem(
            name=coeffs.name,
            a_ref=np.diag(lambda0).astype(np.complex128) + b_mat,
            gram_h=Gram.identity(n, label="H"),
            gram_v=Gram(matrix=np.diag(lambda0).astype(np.complex128), label="V"),
            a0_diag=lambda0,
            b_mat=b_mat,
            b_adjoint=b_adjoint,
            indices=indices,
        )

    def assemble_perturbation(self, coeffs: ModelCoefficients, indices: Sequence[SineIndex]) -> np.ndarray:
        """B_mat[j][k] = ⟨φ_j, b·∇φ_k + cφ_k⟩."""
        integrals = _OneDimensionalIntegrals(indices, coeffs.quadrature_order, self.settings.QUADRATURE_TOL)
        total = np.zeros((len(indices), len(indices)), dtype=np.complex128)
        for term in coeffs.b1:
            total += term.coef * integrals.product(("drift", term.fx), ("mass", term.fy))
        for term in coeffs.b2:
            total += term.coef * integrals.product(("mass", term.fx), ("drift", term.fy))
        for term in coeffs.c:
            total += term.coef * integrals.product(("mass", term.fx), ("mass", term.fy))
        return total

    def assemble_adjoint(self, coeffs: ModelCoefficients, indices: Sequence[SineIndex]) -> np.ndarray:
        """
        Matrix of B* = −b·∇ + (c − ∇·b) in the sine basis.

        Assembled from the coefficient identity rather than by transposition, so
        comparing it with B_mat* checks the integration by parts.
        """
        integrals = _OneDimensionalIntegrals(indices, coeffs.quadrature_order, self.settings.QUADRATURE_TOL)
        total = np.zeros((len(indices), len(indices)), dtype=np.complex128)
        for term in coeffs.b1:
            total -= term.coef * integrals.product(("drift", term.fx), ("mass", term.fy))
            total -= term.coef * integrals.product(("mass'", term.fx), ("mass", term.fy))
        for term in coeffs.b2:
            total -= term.coef * integrals.product(("mass", term.fx), ("drift", term.fy))
            total -= term.coef * integrals.product(("mass", term.fx), ("mass'", term.fy))
        for term in coeffs.c:
            total += term.coef * integrals.product(("mass", term.fx), ("mass", term.fy))
        return total

    def mass_matrix(self, indices: Sequence[SineIndex], quadrature_order: Optional[int] = None) -> np.ndarray:
        """Quadrature Gram ⟨φ_j, φ_k⟩ of the sine basis."""
        integrals = _OneDimensionalIntegrals(
            indices,
            quadrature_order or self.settings.QUADRATURE_ORDER,
            self.settings.QUADRATURE_TOL,
        )
        return integrals.product(("mass", "1"), ("mass", "1")).astype(np.complex128)

    def gamma_ring(self, h: float, reference: ReferenceProblem) -> float:
        """
        γ̊(h) = ‖(I − Q_h)B*A₀⁻¹Q_h‖_H in sine coordinates.

        Q_h is the coordinate truncation to the first N(h) basis functions.
        """
        n_h = self._truncation(h, reference)
        adjoint = self._adjoint_block(reference)
        if n_h == reference.n:
            return 0.0
        block = adjoint[n_h:, :n_h] / reference.a0_diag[:n_h][None, :]
        return densekit.norm2(block)

    def gamma_ring_bound(self, h: float, reference: ReferenceProblem) -> float:
        """‖(I − Q_h)A₀^{-1/2}‖·‖A₀^{1/2}B*A₀⁻¹Q_h‖, the O(h) bound on γ̊(h)."""
        n_h = self._truncation(h, reference)
        if n_h == reference.n:
            return 0.0
        adjoint = self._adjoint_block(reference)
        root = np.sqrt(reference.a0_diag)
        tail = 1.0 / float(np.min(root[n_h:]))
        weighted = root[:, None] * adjoint[:, :n_h] / reference.a0_diag[:n_h][None, :]
        return tail * densekit.norm2(weighted)

    def _truncation(self, h: float, reference: ReferenceProblem) -> int:
        if reference.a0_diag is None:
            raise SizeLimitError("gamma_ring needs a reference with A0_diag")
        n_h = self.count(h)
        if n_h > reference.n:
            raise SizeLimitError("Study level is finer than the reference", N=n_h, n=reference.n)
        return n_h

    @staticmethod
    def _adjoint_block(reference: ReferenceProblem) -> np.ndarray:
        if reference.b_adjoint is not None:
            return reference.b_adjoint
        if reference.b_mat is not None:
            return reference.b_mat.conj().T
        return np.zeros((reference.n, reference.n), dtype=np.complex128)

    # ------------------------------------------------------------------
    # bounded testbeds
    # ------------------------------------------------------------------

    def nonnormal_testbed(
        self,
        n: int,
        spectrum: Sequence[complex],
        departure: float,
        seed: int = 0,
    ) -> ReferenceProblem:
        """
        A = Q(D + departure·N)Q* with exact eigenpairs from triangular solves.

        Args:
            n: Ambient dimension
            spectrum: n distinct eigenvalues
            departure: Scale of the strictly upper triangular part
            seed: Random seed for Q and N

        Raises:
            SpectraOverlapError: If spectrum values are not distinct
        """
        values = np.asarray(spectrum, dtype=np.complex128)
        if values.size != n:
            raise SpectraOverlapError("Spectrum must list n eigenvalues", n=n, given=values.size)
        separation = np.abs(values[:, None] - values[None, :]) + np.eye(n)
        if np.min(separation) <= 1e-12:
            raise SpectraOverlapError("Spectrum values must be distinct")

        rng = np.random.default_rng(seed)
        unitary = random_unitary(n, rng)
        strict = np.triu(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)), 1) / math.sqrt(2 * n)
        triangular = np.diag(values) + departure * strict

        right = np.zeros((n, n), dtype=np.complex128)
        left = np.zeros((n, n), dtype=np.complex128)
        for k in range(n):
            right[:, k] = unitary @ _triangular_right_vector(triangular, k)
            left[:, k] = unitary @ _triangular_left_vector(triangular, k)
        right /= np.linalg.norm(right, axis=0)
        left /= np.linalg.norm(left, axis=0)

        return ReferenceProblem(
            name=f"testbed-{n}-{seed}",
            a_ref=unitary @ triangular @ unitary.conj().T,
            gram_h=Gram.identity(n, label="H"),
            gram_v=Gram.identity(n, label="V"),
            exact=EigenDecomposition(values=values, right_vectors=right, left_vectors=left),
        )


def random_unitary(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary from the QR factorization of a complex Gaussian matrix."""
    z = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _triangular_right_vector(t: np.ndarray, k: int) -> np.ndarray:
    """Back substitution for (T − t_kk)x = 0 with x_k = 1."""
    x = np.zeros(t.shape[0], dtype=np.complex128)
    x[k] = 1.0
    for j in range(k - 1, -1, -1):
        x[j] = -(t[j, j + 1:k + 1] @ x[j + 1:k + 1]) / (t[j, j] - t[k, k])
    return x


def _triangular_left_vector(t: np.ndarray, k: int) -> np.ndarray:
    """Forward substitution for y*(T − t_kk) = 0 with y_k = 1."""
    n = t.shape[0]
    y = np.zeros(n, dtype=np.complex128)
    y[k] = 1.0
    for j in range(k + 1, n):
        y[j] = -(t[k:j, j].conj() @ y[k:j]) / (np.conj(t[j, j]) - np.conj(t[k, k]))
    return y


class _OneDimensionalIntegrals:
    """
    Cached one-dimensional sine integrals on [0, 1], s_k(x) = √2·sin(kπx):

        mass[f][j, k]  = ∫ f s_j s_k
        mass'[f][j, k] = ∫ f' s_j s_k
        drift[f][j, k] = ∫ f s_j s_k'
    """

    def __init__(self, indices: Sequence[SineIndex], order: int, tolerance: float):
        self.k1 = np.asarray([k[0] for k in indices], dtype=int) - 1
        self.k2 = np.asarray([k[1] for k in indices], dtype=int) - 1
        self.kmax = int(max(self.k1.max(), self.k2.max()) + 1) if len(indices) else 1
        self.order = order
        self.tolerance = tolerance
        self._cache: Dict[Tuple[str, str], np.ndarray] = {}

    def product(self, first: Tuple[str, str], second: Tuple[str, str]) -> np.ndarray:
        """Tensor-product integral over the index list: X₁[j₁, k₁]·X₂[j₂, k₂]."""
        x1 = self.matrix(*first)
        x2 = self.matrix(*second)
        return x1[np.ix_(self.k1, self.k1)] * x2[np.ix_(self.k2, self.k2)]

    def matrix(self, kind: str, name: str) -> np.ndarray:
        key = (kind, name)
        if key not in self._cache:
            coarse = self._integrate(kind, name, self.order)
            fine = self._integrate(kind, name, 2 * self.order)
            change = float(np.max(np.abs(fine - coarse)))
            if change > self.tolerance:
                raise QuadratureError(
                    "Sine-basis quadrature did not converge",
                    expression=name,
                    kind=kind,
                    change=change,
                )
            self._cache[key] = fine
        return self._cache[key]

    def _integrate(self, kind: str, name: str, order: int) -> np.ndarray:
        value, derivative = coefficient_table.expression(name)
        weight_function: Callable[[np.ndarray], np.ndarray] = derivative if kind == "mass'" else value
        # about four half-periods of the highest product frequency per panel
        panels = max(1, math.ceil(self.kmax / 4))
        x, w = composite_gauss_legendre(order, panels)
        k = np.arange(1, self.kmax + 1)
        sines = math.sqrt(2.0) * np.sin(math.pi * np.outer(k, x))
        weighted = sines * (w * weight_function(x))[None, :]
        if kind == "drift":
            cosines = math.sqrt(2.0) * math.pi * k[:, None] * np.cos(math.pi * np.outer(k, x))
            return weighted @ cosines.T
        return weighted @ sines.T
