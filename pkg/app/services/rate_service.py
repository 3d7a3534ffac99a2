"""
Rate fitting service.
Log-log least squares for convergence exponents.
"""

import logging
import math
from typing import Optional, Sequence

import numpy as np
from sklearn.linear_model import LinearRegression

from app.config import Settings, get_settings
from app.models.schemas import RateFit

logger = logging.getLogger(__name__)


class RateService:
    """Service for fitting value ≈ C·h^p."""

    def __init__(self, settings: Optional[Settings] = None):
        """Initialize with the slope window from settings."""
        self.settings = settings or get_settings()
        self.min_points = 3

    def fit_rate(self, h_values: Sequence[float], values: Sequence[float], quantity: str = "value") -> RateFit:
        """
        Fit log(value) = log C + p·log h.

        Args:
            h_values: Mesh parameters (any order)
            values: Measured quantity per h
            quantity: Name recorded in the fit

        Returns:
            RateFit with slope p (> 0 when the value decreases with h);
            nonpositive or non-finite values are dropped with a note and fewer
            than three remaining points leave the fit invalid
        """
        fit = RateFit(quantity=quantity)
        h = np.asarray(h_values, dtype=float)
        y = np.asarray(values, dtype=float)
        if h.shape != y.shape:
            fit.notes.append(f"length mismatch: {h.size} h values, {y.size} values")
            return fit

        keep = np.isfinite(y) & (y > 0) & np.isfinite(h) & (h > 0)
        dropped = int(np.sum(~keep))
        if dropped:
            fit.notes.append(f"dropped {dropped} nonpositive or non-finite values")
        fit.points = int(np.sum(keep))
        if fit.points < self.min_points:
            fit.notes.append(f"only {fit.points} valid points")
            logger.debug(f"Rate fit for {quantity} skipped: {fit.points} points")
            return fit

        x = np.log(h[keep]).reshape(-1, 1)
        target = np.log(y[keep])
        model = LinearRegression().fit(x, target)
        predicted = model.predict(x)

        fit.slope = float(model.coef_[0])
        fit.constant = float(math.exp(model.intercept_))
        fit.residual = float(np.sqrt(np.mean((target - predicted) ** 2)))
        fit.valid = True
        logger.debug(f"Rate fit {quantity}: p={fit.slope:.4f} over {fit.points} points")
        return fit

    def within_window(self, fit: RateFit, expected: float, window: Optional[float] = None) -> bool:
        """True when a valid fit lies within expected ± window."""
        window = self.settings.RATE_WINDOW if window is None else window
        return fit.valid and abs(fit.slope - expected) <= window
