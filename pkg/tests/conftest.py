"""
Pytest configuration and fixtures for the Galerkin eigenvector laboratory.
"""

import numpy as np
import pytest

from app.config import Settings
from app.models.operators import Gram
from app.services.model_service import ModelService
from app.utils.coefficients import get_coefficients


def complex_normal(rng, shape):
    """Standard complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_spd(rng, n):
    """Well-conditioned random Hermitian positive definite matrix."""
    x = complex_normal(rng, (n, n))
    return x @ x.conj().T + n * np.eye(n)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20240601)


@pytest.fixture
def lab_settings():
    """Settings with library defaults."""
    return Settings()


@pytest.fixture
def euclidean():
    """Factory for Euclidean Grams."""
    return Gram.identity


@pytest.fixture
def weighted_gram(rng):
    """Random 6×6 SPD Gram."""
    return Gram(matrix=random_spd(rng, 6), label="H")


@pytest.fixture
def small_testbed(lab_settings):
    """12×12 nonnormal testbed with spectrum 1..12."""
    return ModelService(lab_settings).nonnormal_testbed(12, list(range(1, 13)), 0.5, seed=3)


@pytest.fixture(scope="session")
def coarse_model():
    """Default sine model with reference cutoff h = 1/12 (55 modes)."""
    return ModelService().assemble_model(get_coefficients("default"), 1.0 / 12)


def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line(
        "markers", "integration: mark test as end-to-end study run"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
    config.addinivalue_line(
        "markers", "unit: mark test as fast unit test"
    )
