"""
Tests for Arnoldi and two-sided Lanczos recursions.
"""

import math

import numpy as np
import pytest

from app.models.operators import Contour
from app.services.krylov_service import KrylovService
from app.utils.errors import KrylovError
from tests.conftest import complex_normal


class TestKrylovService:
    """Test cases for KrylovService."""

    @pytest.fixture
    def krylov_service(self):
        """Create Krylov service instance."""
        return KrylovService()

    @pytest.fixture
    def nonnormal(self, rng):
        """Random 8×8 nonnormal matrix with two start vectors."""
        a = complex_normal(rng, (8, 8)) + np.diag(np.arange(8.0))
        return a, complex_normal(rng, 8), complex_normal(rng, 8)

    def test_arnoldi_terminates_on_full_space(self, krylov_service):
        """Test diag(1,2,3) with the all-ones start ends happily at ℓ = 3."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), np.ones(3) / np.sqrt(3), 3)
        assert run.length == 3
        assert run.breakdown.kind == "happy"
        assert run.breakdown.step == 3
        assert run.betas[-1] < 1e-12

    def test_arnoldi_invariant_start(self, krylov_service):
        """Test an eigenvector start ends at ℓ = 1."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), [1.0, 0.0, 0.0], 3)
        assert run.length == 1
        assert run.breakdown.kind == "happy"
        assert not run.has_next

    def test_arnoldi_orthonormal_basis(self, krylov_service, nonnormal):
        """Test V*V = I and the Arnoldi relation."""
        a, v1, _ = nonnormal
        run = krylov_service.arnoldi(a, v1, 6)
        assert run.breakdown is None
        assert run.V.shape == (8, 7)
        assert np.allclose(run.V.conj().T @ run.V, np.eye(7), atol=1e-12)
        right, left = krylov_service.recurrence_residual(run)
        assert right <= 1e-9 * np.linalg.norm(a, 2)
        assert left == 0.0

    def test_bilanczos_recurrences(self, krylov_service, nonnormal):
        """Test W*V = I and both three-term recurrences."""
        a, v1, w1 = nonnormal
        run = krylov_service.bilanczos(a, v1, w1, 6)
        assert run.breakdown is None
        assert np.allclose(run.W.conj().T @ run.V, np.eye(7), atol=1e-8)
        right, left = krylov_service.recurrence_residual(run)
        scale = np.linalg.norm(a, 2)
        assert right <= 1e-9 * scale * max(1.0, np.linalg.norm(run.V, 2))
        assert left <= 1e-9 * scale * max(1.0, np.linalg.norm(run.W, 2))
        for beta, gamma in zip(run.betas, run.gammas):
            assert beta > 0.0
            assert abs(gamma) == pytest.approx(beta)

    def test_bilanczos_hermitian_reduces_to_lanczos(self, krylov_service, rng):
        """Test w1 = v1 on a Hermitian matrix gives W = V."""
        x = complex_normal(rng, (10, 10))
        a = x + x.conj().T
        v1 = complex_normal(rng, 10)
        run = krylov_service.bilanczos(a, v1, v1, 6)
        assert np.allclose(run.W, run.V, atol=1e-8)
        j = run.square(6)
        assert np.allclose(j, j.conj().T, atol=1e-8)

    def test_bilanczos_two_by_two(self, krylov_service):
        """Test J₂ of diag(1, 2) has eigenvalues 1 and 2."""
        run = krylov_service.bilanczos(np.diag([1.0, 2.0]), [1.0, 2.0], [3.0, 1.0], 2)
        assert run.length == 2
        values = np.sort(np.linalg.eigvals(run.square(2)).real)
        assert np.allclose(values, [1.0, 2.0], atol=1e-10)

    def test_bilanczos_serious_breakdown(self, krylov_service):
        """Test a constructed start pair with s*r = 0 at the first step."""
        t = (math.sqrt(5.0) - 1.0) / 2.0
        run = krylov_service.bilanczos(np.diag([0.0, 1.0, 2.0]), [1.0, 1.0, 1.0], [0.5 - t, t, 0.5], 3)
        assert run.breakdown.kind == "serious"
        assert run.breakdown.step == 2
        assert run.length == 1
        with pytest.raises(KrylovError):
            krylov_service.ritz_pairs(run, 2)

    def test_identity_after_serious_breakdown(self, krylov_service):
        """Test the middle quantity uses the retained left residual after a serious breakdown."""
        t = (math.sqrt(5.0) - 1.0) / 2.0
        run = krylov_service.bilanczos(np.diag([0.0, 1.0, 2.0]), [1.0, 1.0, 1.0], [0.5 - t, t, 0.5], 3)
        assert run.left_residual is not None
        diagnostics = krylov_service.step_diagnostics(run, 1, 0.0, [1.0, 0.0, 0.0])
        assert "identity_mismatch" not in diagnostics.flags
        assert diagnostics.identity_rhs > 1e-3
        assert diagnostics.identity_lhs == pytest.approx(diagnostics.identity_rhs, rel=1e-10)

    def test_identity_after_one_sided_termination(self, krylov_service):
        """Test an invariant right space with a live left residual keeps the identity exact."""
        run = krylov_service.bilanczos(np.diag([1.0, 2.0, 3.0]), [1.0, 0.0, 0.0], [1.0, 1.0, 1.0], 3)
        assert run.breakdown.kind == "happy"
        assert run.length == 1
        diagnostics = krylov_service.step_diagnostics(run, 1, 2.0, [0.0, 1.0, 0.0])
        assert "identity_mismatch" not in diagnostics.flags
        assert diagnostics.identity_lhs == pytest.approx(1.0)
        assert diagnostics.identity_rhs == pytest.approx(1.0)
        assert diagnostics.eps_estimate == pytest.approx(1.0 / math.sqrt(5.0))

    def test_bilanczos_rejects_biorthogonal_starts(self, krylov_service):
        """Test w1*v1 = 0 is rejected."""
        with pytest.raises(KrylovError):
            krylov_service.bilanczos(np.eye(2), [0.0, 1.0], [1.0, 0.0], 2)

    def test_prepare_rejects_bad_inputs(self, krylov_service):
        """Test start vector length, zero start and step count are validated."""
        a = np.eye(3)
        with pytest.raises(KrylovError):
            krylov_service.arnoldi(a, [1.0, 0.0], 2)
        with pytest.raises(KrylovError):
            krylov_service.arnoldi(a, np.zeros(3), 2)
        with pytest.raises(KrylovError):
            krylov_service.arnoldi(a, np.ones(3), 0)
        with pytest.raises(KrylovError):
            krylov_service.arnoldi(a, np.ones(3), 4)

    def test_ritz_pairs_full_space(self, krylov_service):
        """Test Ritz values at termination are the eigenvalues."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), np.ones(3), 3)
        values = sorted(value.real for value, _ in krylov_service.ritz_pairs(run, 3))
        assert values == pytest.approx([1.0, 2.0, 3.0])

    def test_oblique_projector_is_projector(self, krylov_service, nonnormal):
        """Test Q_ℓ² = Q_ℓ with range K_ℓ."""
        a, v1, w1 = nonnormal
        run = krylov_service.bilanczos(a, v1, w1, 5)
        q = krylov_service.oblique_projector(run, 4)
        assert np.allclose(q @ q, q, atol=1e-8)
        assert np.allclose(q @ run.V[:, :4], run.V[:, :4], atol=1e-8)

    def test_krylov_gap_closes_at_termination(self, krylov_service):
        """Test the gap to an eigenvector vanishes once the space is invariant."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), np.ones(3), 3)
        assert krylov_service.krylov_gap(run, 3, [1.0, 0.0, 0.0]) < 1e-12
        assert krylov_service.krylov_gap(run, 1, [1.0, 0.0, 0.0]) == pytest.approx(np.sqrt(2.0 / 3.0))

    @pytest.mark.parametrize("method", ["arnoldi", "bilanczos"])
    def test_step_identity_agrees(self, krylov_service, small_testbed, rng, method):
        """Test the closed-form middle quantity matches ‖Q_ℓA(I − Q_ℓ)u‖."""
        a = small_testbed.a_ref
        value = small_testbed.exact.values[-1]
        vector = small_testbed.exact.right_vectors[:, -1]
        v1 = complex_normal(rng, 12)
        if method == "arnoldi":
            run = krylov_service.arnoldi(a, v1, 12)
        else:
            run = krylov_service.bilanczos(a, v1, complex_normal(rng, 12), 12)
        contour = Contour(center=value, radius=0.5)
        for ell in range(1, run.length + 1):
            diagnostics = krylov_service.step_diagnostics(run, ell, value, vector, contour=contour)
            assert "identity_mismatch" not in diagnostics.flags
            assert diagnostics.middle == diagnostics.identity_rhs
            assert 0.0 <= diagnostics.gap <= 1.0
        final = krylov_service.step_diagnostics(run, run.length, value, vector, contour=contour)
        assert final.eig_error < 1e-6
        assert final.gap < 1e-8
        assert not final.unconverged

    def test_step_diagnostics_lemma_unchecked(self, krylov_service, small_testbed, rng):
        """Test a Lanczos run shorter than n leaves the lemma unchecked."""
        a = small_testbed.a_ref
        run = krylov_service.bilanczos(a, complex_normal(rng, 12), complex_normal(rng, 12), 5)
        diagnostics = krylov_service.step_diagnostics(
            run, 3, small_testbed.exact.values[-1], small_testbed.exact.right_vectors[:, -1]
        )
        assert "lemma_unchecked" in diagnostics.flags
        assert math.isnan(diagnostics.lemma_rhs)
        assert diagnostics.beta_product == pytest.approx(run.beta(2) * run.beta(3))
        assert diagnostics.eps_estimate >= 0.0

    def test_step_diagnostics_unconverged_flag(self, krylov_service, small_testbed, rng):
        """Test a Ritz value outside the contour is flagged."""
        run = krylov_service.arnoldi(small_testbed.a_ref, complex_normal(rng, 12), 2)
        contour = Contour(center=small_testbed.exact.values[0], radius=1e-6)
        diagnostics = krylov_service.step_diagnostics(
            run, 1, small_testbed.exact.values[0], small_testbed.exact.right_vectors[:, 0], contour=contour
        )
        assert diagnostics.unconverged
        assert "unconverged" in diagnostics.flags

    def test_step_diagnostics_rejects_non_eigenpair(self, krylov_service):
        """Test a vector that is not an eigenvector is rejected."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), np.ones(3), 3)
        with pytest.raises(KrylovError):
            krylov_service.step_diagnostics(run, 2, 1.0, [1.0, 1.0, 0.0])

    def test_lemma_quantities_arnoldi(self, krylov_service):
        """Test the Arnoldi lemma uses ‖W‖ = 1."""
        run = krylov_service.arnoldi(np.diag([1.0, 2.0, 3.0]), np.ones(3), 3)
        lhs, rhs = krylov_service.lemma_quantities(run, 1, 0.5)
        assert lhs == pytest.approx(run.beta(2))
        assert rhs == pytest.approx((1.0 + math.sqrt(2.0)) * 0.5)
