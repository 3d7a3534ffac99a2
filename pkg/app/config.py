"""
Configuration management for the Galerkin eigenvector laboratory.
Handles environment variables, numerical tolerances and study defaults.
"""

from typing import List

from pydantic import field_validator
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """Laboratory settings loaded from environment variables."""

    # Environment
    ENV: str = "development"

    # Dense kernels
    RANK_TOL: float = 1e-12
    HERMITIAN_TOL: float = 1e-13
    ORTHONORMAL_TOL: float = 1e-10
    SINGULAR_TOL: float = 1e-13
    IDEMPOTENT_TOL: float = 1e-10

    # Contour quadrature
    CONTOUR_NODES: int = 32
    CONTOUR_MAX_NODES: int = 1024
    CONTOUR_TOL: float = 1e-10
    CONTOUR_RADIUS_FACTOR: float = 0.5

    # Sylvester / sep
    SEMIGROUP_PANELS: int = 64
    SEMIGROUP_PANEL_NODES: int = 10
    SEMIGROUP_TAIL_TOL: float = 1e-10
    NUMRANGE_SAMPLES: int = 256
    NUMRANGE_TOL: float = 1e-12
    SEP_MAX_PRODUCT: int = 10000
    SEP_OPERATOR_SAMPLES: int = 64

    # Sine-basis model
    QUADRATURE_ORDER: int = 40
    QUADRATURE_TOL: float = 1e-10
    H_REF_INVERSE: int = 48
    STUDY_H_INVERSES: str = "8,12,16,24"
    MAX_MODEL_DIM: int = 2500

    # Krylov
    BREAKDOWN_TOL: float = 1e-12
    HAPPY_TOL: float = 1e-13

    # Harness
    RATE_WINDOW: float = 0.35
    DEFAULT_SEED: int = 20240601
    DEFAULT_JOBS: int = 1

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        case_sensitive = True

    @field_validator('CONTOUR_NODES', 'CONTOUR_MAX_NODES')
    @classmethod
    def validate_nodes(cls, v: int) -> int:
        """Trapezoidal rules need at least four nodes."""
        if v < 4:
            raise ValueError("Contour node counts must be at least 4")
        return v

    @field_validator(
        'RANK_TOL', 'HERMITIAN_TOL', 'ORTHONORMAL_TOL', 'SINGULAR_TOL',
        'IDEMPOTENT_TOL', 'CONTOUR_TOL', 'SEMIGROUP_TAIL_TOL',
        'QUADRATURE_TOL', 'BREAKDOWN_TOL', 'HAPPY_TOL', 'NUMRANGE_TOL'
    )
    @classmethod
    def validate_tolerance(cls, v: float) -> float:
        """Ensure tolerances are meaningful relative factors."""
        if not 0.0 < v < 1.0:
            raise ValueError("Tolerances must lie strictly between 0 and 1")
        return v

    @field_validator('STUDY_H_INVERSES')
    @classmethod
    def validate_h_inverses(cls, v: str) -> str:
        """Study levels must refine strictly."""
        values = [int(item) for item in v.split(',')]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("STUDY_H_INVERSES must be strictly increasing")
        return v

    def get_h_list(self) -> List[float]:
        """Get study mesh parameters, coarsest first."""
        return [1.0 / int(item) for item in self.STUDY_H_INVERSES.split(',')]

    def get_h_ref(self) -> float:
        """Get the reference cutoff."""
        return 1.0 / self.H_REF_INVERSE


# Initialize settings
settings = Settings()


def get_settings() -> Settings:
    """Get laboratory settings instance."""
    return settings
