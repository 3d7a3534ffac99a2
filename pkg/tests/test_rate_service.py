"""
Tests for log-log rate fitting.
"""

import numpy as np
import pytest

from app.models.schemas import RateFit
from app.services.rate_service import RateService


class TestRateService:
    """Test cases for RateService."""

    @pytest.fixture
    def rate_service(self):
        """Create rate service instance."""
        return RateService()

    @pytest.fixture
    def h_values(self):
        return [1 / 8, 1 / 12, 1 / 16, 1 / 24]

    def test_quadratic_rate(self, rate_service, h_values):
        """Test value = 3h² gives slope 2 and constant 3."""
        fit = rate_service.fit_rate(h_values, [3.0 * h ** 2 for h in h_values], quantity="gap")
        assert fit.valid
        assert fit.quantity == "gap"
        assert fit.slope == pytest.approx(2.0)
        assert fit.constant == pytest.approx(3.0)
        assert "intercept" not in fit.model_dump()
        assert fit.residual == pytest.approx(0.0, abs=1e-12)
        assert fit.points == 4

    def test_constant_has_zero_slope(self, rate_service, h_values):
        """Test a constant sequence fits slope 0."""
        fit = rate_service.fit_rate(h_values, [0.7] * 4)
        assert fit.slope == pytest.approx(0.0, abs=1e-12)

    def test_noisy_cubic(self, rate_service):
        """Test h³ with 5% multiplicative noise fits within [2.7, 3.3]."""
        rng = np.random.default_rng(11)
        h = np.array([1 / 8, 1 / 12, 1 / 16, 1 / 24, 1 / 32])
        values = h ** 3 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0, size=h.size))
        fit = rate_service.fit_rate(h, values)
        assert 2.7 <= fit.slope <= 3.3
        assert rate_service.within_window(fit, 3.0)

    def test_too_few_points(self, rate_service):
        """Test two points leave the fit invalid."""
        fit = rate_service.fit_rate([0.5, 0.25], [1.0, 0.25])
        assert not fit.valid
        assert np.isnan(fit.slope)
        assert any("valid points" in note for note in fit.notes)

    def test_drops_nonpositive_values(self, rate_service, h_values):
        """Test zeros and NaN are dropped with a note."""
        values = [h ** 2 for h in h_values[:3]] + [0.0]
        fit = rate_service.fit_rate(h_values, values)
        assert fit.valid
        assert fit.points == 3
        assert fit.slope == pytest.approx(2.0)
        assert fit.notes == ["dropped 1 nonpositive or non-finite values"]

        fit = rate_service.fit_rate(h_values, [float("nan")] * 2 + [1.0, 2.0])
        assert not fit.valid

    def test_length_mismatch(self, rate_service):
        """Test mismatched inputs are reported, not fitted."""
        fit = rate_service.fit_rate([0.5, 0.25, 0.125], [1.0, 2.0])
        assert not fit.valid
        assert "length mismatch" in fit.notes[0]

    def test_within_window(self, rate_service):
        """Test the acceptance window around an expected slope."""
        fit = RateFit(quantity="q", slope=1.7, valid=True)
        assert rate_service.within_window(fit, 2.0)
        assert not rate_service.within_window(fit, 2.0, window=0.2)
        assert not rate_service.within_window(RateFit(quantity="q"), 2.0)
