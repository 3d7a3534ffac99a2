"""
Tests for Sylvester solvers and sep bounds.
"""

import numpy as np
import pytest

from app.config import Settings
from app.models.operators import Contour
from app.services.sylvester_service import SylvesterService
from app.utils.errors import (
    ContourError,
    NumericalRangeOverlapError,
    ShapeError,
    SizeLimitError,
    SpectraOverlapError,
)
from tests.conftest import complex_normal


class TestSylvesterService:
    """Test cases for SylvesterService."""

    @pytest.fixture
    def sylvester_service(self):
        """Create Sylvester service instance."""
        return SylvesterService()

    @pytest.fixture
    def separated_pair(self, rng):
        """L₁ near 4 and L₂ near 0 with disjoint numerical ranges."""
        l1 = 4.0 * np.eye(5) + 0.2 * complex_normal(rng, (5, 5))
        l2 = 0.2 * complex_normal(rng, (4, 4))
        rhs = complex_normal(rng, (5, 4))
        return l1, l2, rhs

    def test_sep_scalar_cases(self, sylvester_service):
        """Test sep of scalars is the distance between them."""
        assert sylvester_service.sep_bruteforce([[2.0]], [[0.0]]) == pytest.approx(2.0)
        assert sylvester_service.sep_bruteforce([[1.0]], [[1.0]]) == pytest.approx(0.0, abs=1e-15)

    def test_sep_normal_case(self, sylvester_service):
        """Test sep of normal matrices is the smallest eigenvalue gap."""
        assert sylvester_service.sep_bruteforce(np.diag([1.0, 2.0]), [[5.0]]) == pytest.approx(3.0)

    def test_sep_size_limit(self):
        """Test the linearization cap is enforced."""
        service = SylvesterService(Settings(SEP_MAX_PRODUCT=4))
        with pytest.raises(SizeLimitError):
            service.sep_bruteforce(np.eye(3), np.zeros((3, 3)))

    def test_sep_operator_sampled_scalar(self, sylvester_service):
        """Test the sampled operator-norm sep agrees in the scalar case."""
        assert sylvester_service.sep_operator_sampled([[2.0]], [[0.0]], samples=4) == pytest.approx(2.0)

    def test_oracle_scalar(self, sylvester_service):
        """Test 2S − S·0 = 1 gives S = 0.5."""
        s = sylvester_service.sylvester_oracle([[2.0]], [[0.0]], [[1.0]])
        assert s[0, 0] == pytest.approx(0.5)

    def test_oracle_zero_rhs(self, sylvester_service, separated_pair):
        """Test the unique solution for M = 0 is zero."""
        l1, l2, _ = separated_pair
        assert np.allclose(sylvester_service.sylvester_oracle(l1, l2, np.zeros((5, 4))), 0.0)

    def test_oracle_residual(self, sylvester_service, rng):
        """Test the oracle solves a random separated problem."""
        l1 = 5.0 * np.eye(4) + 0.5 * complex_normal(rng, (4, 4))
        l2 = 0.5 * complex_normal(rng, (3, 3))
        rhs = complex_normal(rng, (4, 3))
        s = sylvester_service.sylvester_oracle(l1, l2, rhs)
        assert np.linalg.norm(l1 @ s - s @ l2 - rhs, 2) <= 1e-10 * np.linalg.norm(rhs, 2)

    def test_oracle_rejects_overlap(self, sylvester_service):
        """Test shared spectra are rejected."""
        with pytest.raises(SpectraOverlapError):
            sylvester_service.sylvester_oracle(np.eye(2), [[1.0]], np.ones((2, 1)))

    def test_oracle_rejects_wrong_rhs_shape(self, sylvester_service):
        """Test M must be n₁×n₂."""
        with pytest.raises(ShapeError):
            sylvester_service.sylvester_oracle(np.eye(2), [[3.0]], np.ones((1, 2)))

    def test_bartels_stewart_matches_oracle(self, sylvester_service, separated_pair):
        """Test the Schur-based solver against the linearized solve."""
        l1, l2, rhs = separated_pair
        oracle = sylvester_service.sylvester_oracle(l1, l2, rhs)
        assert np.allclose(sylvester_service.sylvester_solve(l1, l2, rhs), oracle, atol=1e-10)

    def test_contour_scalar(self, sylvester_service):
        """Test the contour representation in the scalar case."""
        contour = Contour(center=0.0, radius=1.0)
        s = sylvester_service.sylvester_contour([[2.0]], [[0.0]], [[1.0]], contour)
        assert s[0, 0] == pytest.approx(0.5, abs=1e-10)

    def test_contour_rejects_swapped_enclosure(self, sylvester_service):
        """Test a contour around σ(L₁) instead of σ(L₂) is rejected."""
        contour = Contour(center=2.0, radius=1.0)
        with pytest.raises(ContourError):
            sylvester_service.sylvester_contour([[2.0]], [[0.0]], [[1.0]], contour)

    def test_contour_matches_oracle(self, sylvester_service, separated_pair):
        """Test the contour solver on separated clusters."""
        l1, l2, rhs = separated_pair
        contour = Contour(center=0.0, radius=2.0)
        oracle = sylvester_service.sylvester_oracle(l1, l2, rhs)
        s = sylvester_service.sylvester_contour(l1, l2, rhs, contour)
        assert np.linalg.norm(s - oracle, 2) <= 1e-8 * np.linalg.norm(oracle, 2)

    def test_semigroup_scalar(self, sylvester_service):
        """Test S = ∫₀^∞ e^{−2t} dt = 0.5."""
        s = sylvester_service.sylvester_semigroup([[1.0]], [[-1.0]], [[1.0]])
        assert s[0, 0] == pytest.approx(0.5, abs=1e-9)

    def test_semigroup_zero_rhs(self, sylvester_service):
        """Test M = 0 gives zero."""
        s = sylvester_service.sylvester_semigroup([[1.0]], [[-1.0]], [[0.0]])
        assert s[0, 0] == 0.0

    def test_semigroup_matches_oracle(self, sylvester_service, separated_pair):
        """Test the semigroup solver when numerical ranges are separated."""
        l1, l2, rhs = separated_pair
        oracle = sylvester_service.sylvester_oracle(l1, l2, rhs)
        s = sylvester_service.sylvester_semigroup(l1, l2, rhs)
        assert np.linalg.norm(s - oracle, 2) <= 1e-7 * np.linalg.norm(oracle, 2)

    def test_semigroup_rejects_overlap(self, sylvester_service):
        """Test overlapping numerical ranges are rejected."""
        with pytest.raises(NumericalRangeOverlapError):
            sylvester_service.sylvester_semigroup([[0.0, 2.0], [0.0, 0.0]], [[0.5]], [[1.0], [1.0]])

    def test_numerical_range_support_examples(self, sylvester_service):
        """Test support values of small matrices."""
        assert sylvester_service.numerical_range_support(np.diag([0.0, 1.0]), 0.0) == pytest.approx(1.0)
        nilpotent = [[0.0, 2.0], [0.0, 0.0]]
        for theta in (0.0, 0.7, 2.0):
            assert sylvester_service.numerical_range_support(nilpotent, theta) == pytest.approx(1.0)
        assert sylvester_service.numerical_range_support(1j * np.eye(2), np.pi / 2) == pytest.approx(1.0)

    def test_numrange_distance_examples(self, sylvester_service):
        """Test sampled distances between numerical ranges."""
        scalar = sylvester_service.numrange_distance([[3.0]], [[0.0]])
        assert scalar.delta == pytest.approx(3.0)
        assert scalar.theta == pytest.approx(0.0)
        assert not scalar.overlapping
        intervals = sylvester_service.numrange_distance(np.diag([2.0, 3.0]), np.diag([-1.0, 0.0]))
        assert intervals.delta == pytest.approx(2.0)
        same = sylvester_service.numrange_distance(np.diag([1.0, 2.0]), np.diag([1.0, 2.0]))
        assert same.overlapping
        assert same.delta == 0.0

    def test_numrange_distance_touching_and_identical(self, sylvester_service):
        """Test identical and touching ranges report overlap despite rounding."""
        rotated = np.array([[1.0, 0.3j], [0.3j, 2.0]]) * np.exp(0.4j)
        identical = sylvester_service.numrange_distance(rotated, rotated)
        assert identical.overlapping
        assert identical.delta == 0.0
        touching = sylvester_service.numrange_distance(np.diag([0.0, 1.0]), np.diag([1.0, 2.0]))
        assert touching.overlapping
        assert touching.delta == 0.0
        apart = sylvester_service.numrange_distance(np.diag([0.0, 1.0]), np.diag([1.5, 2.0]))
        assert not apart.overlapping
        assert apart.delta == pytest.approx(0.5)

    def test_semigroup_rejects_identical_ranges(self, sylvester_service):
        """Test L₁ = L₂ never reaches the semigroup quadrature."""
        with pytest.raises(NumericalRangeOverlapError):
            sylvester_service.sylvester_semigroup(np.diag([1.0, 2.0]), np.diag([1.0, 2.0]), np.eye(2))

    def test_semigroup_tail_bound_is_relative(self, sylvester_service):
        """Test the default horizon meets tail_tol relative to ‖M‖/Δ."""
        rhs = 5.0 * np.eye(2)
        delta = 2.0
        t_max = np.log(1.0 / 1e-6) / delta
        bound = sylvester_service.semigroup_tail_bound(rhs, delta, t_max)
        assert bound == pytest.approx(1e-6 * 5.0 / delta)

    def test_numrange_distance_needs_samples(self, sylvester_service):
        """Test too few sampled directions are rejected."""
        with pytest.raises(ShapeError):
            sylvester_service.numrange_distance([[1.0]], [[0.0]], samples=8)

    def test_pseudo_bound_scalar(self, sylvester_service):
        """Test ε₁ = ε₂ = 1 on the unit circle gives bound 1 ≤ sep 2."""
        contour = Contour(center=0.0, radius=1.0)
        assert sylvester_service.contour_epsilons([[2.0]], [[0.0]], contour) == pytest.approx((1.0, 1.0))
        bound = sylvester_service.sep_lower_pseudo([[2.0]], [[0.0]], contour)
        assert bound == pytest.approx(1.0)
        assert bound <= sylvester_service.sep_bruteforce([[2.0]], [[0.0]])

    def test_pseudo_bound_normal_sweep(self, sylvester_service, rng):
        """Test the pseudospectral bound stays below sep for normal pairs."""
        contour = Contour(center=0.0, radius=1.5)
        for _ in range(20):
            inner = 0.5 * np.sqrt(rng.uniform(size=3)) * np.exp(2j * np.pi * rng.uniform(size=3))
            outer = (3.0 + rng.uniform(size=3)) * np.exp(2j * np.pi * rng.uniform(size=3))
            l1, l2 = np.diag(outer), np.diag(inner)
            bound = sylvester_service.sep_lower_pseudo(l1, l2, contour, certified=True)
            assert bound <= sylvester_service.sep_bruteforce(l1, l2) + 1e-12

    def test_sep_report(self, sylvester_service):
        """Test the report on the scalar pair."""
        contour = Contour(center=0.0, radius=1.0)
        report = sylvester_service.sep_report([[2.0]], [[0.0]], contour, rhs=[[1.0]], seed=7)
        assert report.seed == 7
        assert report.sep_exact == pytest.approx(2.0)
        assert report.bound_pseudo == pytest.approx(1.0)
        assert report.bound_pseudo_certified < report.bound_pseudo
        assert report.bound_numrange == pytest.approx(2.0)
        assert report.contour_error < 1e-10
        assert report.semigroup_error < 1e-8
        assert report.flags == []
