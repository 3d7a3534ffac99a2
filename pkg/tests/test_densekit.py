"""
Tests for dense kernels.
"""

import numpy as np
import pytest

from app.utils import densekit
from app.utils.errors import NonFiniteInputError, ShapeError, SingularMatrixError
from app.utils.quadrature import composite_gauss_legendre, gauss_legendre
from tests.conftest import complex_normal, random_spd


class TestDensekit:
    """Test cases for densekit."""

    def test_svd_reconstructs(self, rng):
        """Test U·diag(s)·V* reproduces the input."""
        m = complex_normal(rng, (7, 4))
        left, values, right = densekit.svd(m)
        assert np.allclose(left @ np.diag(values) @ right.conj().T, m, atol=1e-12)
        assert np.all(np.diff(values) <= 0)

    def test_norm2_and_smallest(self):
        """Test spectral norm and smallest singular value of a diagonal matrix."""
        m = np.diag([3.0, -2.0, 0.5])
        assert densekit.norm2(m) == pytest.approx(3.0)
        assert densekit.smallest_singular_value(m) == pytest.approx(0.5)

    def test_numerical_rank(self, rng):
        """Test rank detection for a product of thin factors."""
        m = complex_normal(rng, (8, 3)) @ complex_normal(rng, (3, 8))
        assert densekit.numerical_rank(densekit.singular_values(m), m.shape) == 3

    def test_rank_of_zero_matrix(self):
        """Test the zero matrix has rank 0."""
        m = np.zeros((4, 4))
        assert densekit.numerical_rank(densekit.singular_values(m), m.shape) == 0

    def test_eig_dense_with_left_vectors(self, rng):
        """Test right and left eigenvectors of a nonnormal matrix."""
        m = np.triu(complex_normal(rng, (5, 5)), 1) + np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
        result = densekit.eig_dense(m, left=True)
        for i, value in enumerate(result.values):
            x = result.right_vectors[:, i]
            y = result.left_vectors[:, i]
            assert np.linalg.norm(m @ x - value * x) < 1e-10
            assert np.linalg.norm(y.conj() @ m - value * y.conj()) < 1e-10
            assert np.linalg.norm(x) == pytest.approx(1.0)

    def test_eig_generalized_matches_standard(self, rng):
        """Test the pencil (A, I) has the eigenvalues of A."""
        a = np.diag([1.0, 4.0, 9.0]).astype(complex)
        result = densekit.eig_generalized(a, np.eye(3))
        assert np.allclose(np.sort(result.values.real), [1.0, 4.0, 9.0])

    def test_eig_generalized_rejects_singular_mass(self):
        """Test a singular B is reported."""
        with pytest.raises(SingularMatrixError):
            densekit.eig_generalized(np.eye(2), np.diag([1.0, 0.0]))

    def test_eig_generalized_rejects_zero_mass(self):
        """Test an all-zero B is reported as singular."""
        with pytest.raises(SingularMatrixError):
            densekit.eig_generalized(np.diag([1.0, 2.0]), np.zeros((2, 2)))

    def test_solve_linear_vector_and_matrix(self, rng):
        """Test solves with vector and matrix right-hand sides."""
        a = random_spd(rng, 5)
        b = complex_normal(rng, 5)
        x = densekit.solve_linear(a, b)
        assert x.shape == (5,)
        assert np.allclose(a @ x, b, atol=1e-12)
        block = complex_normal(rng, (5, 2))
        assert np.allclose(a @ densekit.solve_linear(a, block), block, atol=1e-12)

    def test_solve_linear_rejects_singular(self):
        """Test a singular system reports its condition estimate."""
        with pytest.raises(SingularMatrixError) as info:
            densekit.solve_linear(np.ones((3, 3)), np.ones(3))
        assert "condition_estimate" in info.value.context

    def test_rejects_non_finite(self):
        """Test NaN entries are rejected."""
        with pytest.raises(NonFiniteInputError):
            densekit.norm2(np.array([[1.0, np.nan]]))

    def test_rejects_three_dimensional(self):
        """Test arrays with three axes are rejected."""
        with pytest.raises(ShapeError):
            densekit.norm2(np.zeros((2, 2, 2)))

    def test_weighted_norm_identity_factor(self, rng):
        """Test the G-norm with G = I is the spectral norm."""
        m = complex_normal(rng, (4, 4))
        assert densekit.weighted_norm(m, np.eye(4)) == pytest.approx(densekit.norm2(m))

    def test_weighted_norm_of_scaling(self):
        """Test a G-self-adjoint diagonal map keeps its spectral radius."""
        factor = np.diag([1.0, 10.0])
        assert densekit.weighted_norm(np.diag([2.0, 3.0]), factor) == pytest.approx(3.0)


class TestQuadrature:
    """Test cases for Gauss-Legendre rules."""

    def test_polynomial_exactness(self):
        """Test order q integrates degree 2q−1 exactly."""
        nodes, weights = gauss_legendre(4, 0.0, 2.0)
        assert np.sum(weights * nodes ** 7) == pytest.approx(2.0 ** 8 / 8, rel=1e-13)

    def test_composite_rule(self):
        """Test the composite rule on a smooth integrand."""
        nodes, weights = composite_gauss_legendre(10, 8, 0.0, np.pi)
        assert np.sum(weights * np.sin(nodes)) == pytest.approx(2.0, abs=1e-13)
