"""
Tests for the sine-basis model and the nonnormal testbeds.
"""

import math

import numpy as np
import pytest

from app.models.schemas import CoefficientTerm, ModelCoefficients
from app.services.model_service import ModelService, random_unitary
from app.utils.coefficients import get_coefficients
from app.utils.errors import CoefficientError, ShapeError, SizeLimitError, SpectraOverlapError


class TestSineBasis:
    """Test cases for the sine-basis assembly."""

    @pytest.fixture
    def model_service(self):
        """Create model service instance."""
        return ModelService()

    def test_sine_indices_small(self, model_service):
        """Test index enumeration for h = 1/3 and h = 1/4."""
        assert model_service.sine_indices(1 / 3) == [(1, 1)]
        assert model_service.sine_indices(1 / 4) == [(1, 1), (1, 2), (2, 1)]

    def test_sine_indices_nested(self, model_service):
        """Test a smaller h gives a superset in the same leading order."""
        coarse = model_service.sine_indices(1 / 8)
        fine = model_service.sine_indices(1 / 12)
        assert fine[:len(coarse)] == coarse
        assert model_service.count(1 / 8) == 21
        assert model_service.count(1 / 12) == 55

    def test_sine_indices_rejects_large_h(self, model_service):
        """Test h outside (0, 1/2] is rejected."""
        with pytest.raises(ShapeError):
            model_service.sine_indices(0.75)

    def test_self_adjoint_model_is_diagonal(self, model_service):
        """Test b = 0, c = 0 gives A_ref = diag((k₁² + k₂²)π²)."""
        reference = model_service.assemble_model(get_coefficients("self_adjoint"), 1 / 6)
        expected = np.array([(k1 ** 2 + k2 ** 2) * math.pi ** 2 for k1, k2 in reference.indices])
        assert np.allclose(reference.a_ref, np.diag(expected))
        assert np.allclose(reference.gram_v.matrix, np.diag(expected))

    def test_constant_potential_shifts(self, model_service):
        """Test c = 1 adds the identity."""
        reference = model_service.assemble_model(get_coefficients("potential"), 1 / 6)
        assert np.allclose(reference.b_mat, np.eye(reference.n), atol=1e-9)

    def test_mass_matrix_is_identity(self, model_service):
        """Test the quadrature reproduces the orthonormality of the basis."""
        indices = model_service.sine_indices(1 / 10)
        assert np.allclose(model_service.mass_matrix(indices), np.eye(len(indices)), atol=1e-10)

    def test_divergence_free_field_is_skew(self, model_service):
        """Test the swirl field gives a skew-Hermitian perturbation."""
        reference = model_service.assemble_model(get_coefficients("swirl"), 1 / 8)
        b_mat = reference.b_mat
        assert np.max(np.abs(b_mat)) > 0.1
        assert np.allclose(b_mat + b_mat.conj().T, 0.0, atol=1e-8)

    def test_adjoint_assembly_matches_transpose(self, coarse_model):
        """Test the integrated-by-parts adjoint equals B_mat*."""
        assert np.allclose(coarse_model.b_adjoint, coarse_model.b_mat.conj().T, atol=1e-8)

    def test_rejects_field_nonzero_on_boundary(self, model_service):
        """Test an advection field that does not vanish on ∂Ω is rejected."""
        coeffs = ModelCoefficients(b1=[CoefficientTerm(coef=1.0, fx="1", fy="x(1-x)")])
        with pytest.raises(CoefficientError):
            model_service.assemble_model(coeffs, 1 / 6)

    def test_rejects_unknown_coefficient_set(self):
        """Test an unregistered name is rejected."""
        with pytest.raises(CoefficientError):
            get_coefficients("no-such-set")

    def test_gamma_ring_zero_for_self_adjoint(self, model_service):
        """Test B = 0 gives γ̊ = 0."""
        reference = model_service.assemble_model(get_coefficients("self_adjoint"), 1 / 8)
        assert model_service.gamma_ring(1 / 4, reference) == 0.0

    def test_gamma_ring_decays(self, model_service, coarse_model):
        """Test γ̊ shrinks under refinement and stays below its bound."""
        coarse = model_service.gamma_ring(1 / 4, coarse_model)
        fine = model_service.gamma_ring(1 / 8, coarse_model)
        assert 0.0 < fine < coarse
        for h in (1 / 4, 1 / 8):
            bound = model_service.gamma_ring_bound(h, coarse_model)
            assert model_service.gamma_ring(h, coarse_model) <= bound * (1 + 1e-12)

    def test_gamma_ring_at_reference(self, model_service, coarse_model):
        """Test γ̊ vanishes at the reference cutoff and refuses finer levels."""
        assert model_service.gamma_ring(1 / 12, coarse_model) == 0.0
        with pytest.raises(SizeLimitError):
            model_service.gamma_ring(1 / 16, coarse_model)


class TestTestbed:
    """Test cases for nonnormal testbeds."""

    @pytest.fixture
    def model_service(self):
        """Create model service instance."""
        return ModelService()

    def test_random_unitary(self, rng):
        """Test the Haar sample is unitary."""
        q = random_unitary(7, rng)
        assert np.allclose(q.conj().T @ q, np.eye(7), atol=1e-12)

    def test_zero_departure_is_normal(self, model_service):
        """Test departure 0 gives a normal matrix with unitary eigenvectors."""
        reference = model_service.nonnormal_testbed(8, list(range(1, 9)), 0.0, seed=1)
        a = reference.a_ref
        assert np.allclose(a @ a.conj().T, a.conj().T @ a, atol=1e-10)
        x = reference.exact.right_vectors
        assert np.allclose(x.conj().T @ x, np.eye(8), atol=1e-10)

    def test_exact_eigenpairs(self, small_testbed):
        """Test the stored right and left eigenvectors."""
        a = small_testbed.a_ref
        exact = small_testbed.exact
        for k, value in enumerate(exact.values):
            x = exact.right_vectors[:, k]
            y = exact.left_vectors[:, k]
            assert np.linalg.norm(a @ x - value * x) < 1e-10
            assert np.linalg.norm(y.conj() @ a - value * y.conj()) < 1e-10
        computed = np.sort(np.linalg.eigvals(a).real)
        assert np.allclose(computed, np.arange(1, 13), atol=1e-10)

    def test_departure_worsens_conditioning(self, model_service):
        """Test left/right eigenvector alignment degrades with departure."""

        def worst_condition(departure):
            exact = model_service.nonnormal_testbed(10, list(range(1, 11)), departure, seed=4).exact
            products = np.abs(np.sum(exact.left_vectors.conj() * exact.right_vectors, axis=0))
            return float(np.max(1.0 / products))

        assert worst_condition(0.0) == pytest.approx(1.0)
        assert worst_condition(5.0) > worst_condition(0.5) > 1.0

    def test_rejects_repeated_eigenvalues(self, model_service):
        """Test the spectrum must be distinct."""
        with pytest.raises(SpectraOverlapError):
            model_service.nonnormal_testbed(3, [1.0, 1.0, 2.0], 0.5)

    def test_rejects_wrong_spectrum_length(self, model_service):
        """Test n eigenvalues are required."""
        with pytest.raises(SpectraOverlapError):
            model_service.nonnormal_testbed(3, [1.0, 2.0], 0.5)
