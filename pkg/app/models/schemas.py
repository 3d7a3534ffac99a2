"""
Pydantic models for study configuration and report rows.
Provides type-safe contracts for everything the harness reads or writes.
"""

import math
from typing import ClassVar, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class CoefficientTerm(BaseModel):
    """One separable term coef·f(x₁)·g(x₂) drawn from the expression table."""

    coef: float = Field(..., description="Scalar multiplier")
    fx: str = Field(..., description="Expression name in x₁")
    fy: str = Field(..., description="Expression name in x₂")


class ModelCoefficients(BaseModel):
    """Advection field b = (b₁, b₂) and potential c as sums of separable terms."""

    name: str = Field("custom", description="Registry name or 'custom'")
    b1: List[CoefficientTerm] = Field(default_factory=list)
    b2: List[CoefficientTerm] = Field(default_factory=list)
    c: List[CoefficientTerm] = Field(default_factory=list)
    quadrature_order: int = Field(40, ge=4, le=400, description="Gauss-Legendre order q_g per panel")

    class Config:
        json_schema_extra = {
            "example": {
                "name": "default",
                "b1": [{"coef": 1.0, "fx": "x(1-x)", "fy": "x(1-x)"}],
                "b2": [{"coef": -0.5, "fx": "sin(pi x)", "fy": "sin(pi x)"}],
                "c": [{"coef": 1.0, "fx": "1", "fy": "1"}, {"coef": 1.0, "fx": "x", "fy": "x"}],
                "quadrature_order": 40
            }
        }


class StudyConfig(BaseModel):
    """JSON study configuration."""

    kind: Literal["spectral", "bounded", "krylov", "sep"] = "spectral"
    coefficients: str = Field("default", description="Coefficient registry name")
    custom_coefficients: Optional[ModelCoefficients] = None
    h_list: List[float] = Field(default_factory=lambda: [1 / 8, 1 / 12, 1 / 16, 1 / 24])
    h_ref: float = Field(1 / 48, gt=0, le=0.5)
    quadrature_order: int = Field(40, ge=4, le=400)
    radius_factor: float = Field(0.5, gt=0, lt=1)
    taus: List[Tuple[float, float]] = Field(
        default_factory=lambda: [(0.3, 0.0), (1.0, 1.0)],
        description="Shifts τ as (real, imaginary) pairs"
    )
    seed: int = Field(20240601, ge=0)
    trials: int = Field(0, ge=0, description="Instance count for krylov/sep studies (0 = default)")
    testbed_dim: int = Field(0, ge=0, description="Ambient size for testbeds (0 = default)")
    departure: float = Field(0.5, ge=0)
    subspace_dims: List[int] = Field(default_factory=lambda: [10, 20, 30, 40])
    out_dir: str = "results"
    jobs: int = Field(1, ge=1)
    format: Literal["csv", "json"] = "csv"

    @field_validator('h_list')
    @classmethod
    def validate_h_list(cls, v: List[float]) -> List[float]:
        """h list must be strictly decreasing and inside (0, 1/2]."""
        if any(not 0 < h <= 0.5 for h in v):
            raise ValueError("every h must satisfy 0 < h <= 1/2")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("h_list must be strictly decreasing")
        return v

    @model_validator(mode='after')
    def check_reference(self) -> 'StudyConfig':
        if self.kind == "spectral" and any(h <= self.h_ref for h in self.h_list):
            raise ValueError("every h must exceed h_ref")
        return self

    def tau_values(self) -> List[complex]:
        return [complex(re, im) for re, im in self.taus]


class StudyRecord(BaseModel):
    """Per-h (or per-N) diagnostics of one Galerkin approximation."""

    h: float
    N: int
    beta: float = math.nan
    betaRing: float = math.nan
    gapUS_H: float = math.nan
    gapUUh_H: float = math.nan
    projDefect_H: float = math.nan
    epsH: float = math.nan
    epsRingH: float = math.nan
    gapUS_V: float = math.nan
    gapUUh_V: float = math.nan
    projDefect_V: float = math.nan
    epsV: float = math.nan
    eigErr: float = math.nan
    clusterSize: int = 0
    flags: List[str] = Field(default_factory=list)

    # summary-only diagnostics
    middleH: float = math.nan
    leftGap: float = math.nan
    gammaV: float = math.nan
    gammaRing: float = math.nan
    projNormV: float = math.nan
    projComplementNormV: float = math.nan
    projBound: float = math.nan
    adjointGap: float = math.nan

    class Config:
        json_schema_extra = {
            "example": {
                "h": 0.125, "N": 21, "beta": 0.98, "betaRing": 1.0,
                "gapUS_H": 3.1e-3, "gapUUh_H": 3.1e-3, "projDefect_H": 2.2e-5,
                "epsH": 7.0e-3, "epsRingH": 6.9e-3, "eigErr": 1.4e-4,
                "clusterSize": 1, "flags": []
            }
        }

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "h", "N", "beta", "betaRing", "gapUS_H", "gapUUh_H", "projDefect_H",
        "epsH", "epsRingH", "gapUS_V", "gapUUh_V", "projDefect_V", "epsV",
        "eigErr", "clusterSize", "flags",
    )


class RateFit(BaseModel):
    """Log-log least squares fit value ≈ C·h^p."""

    quantity: str
    slope: float = math.nan
    constant: float = Field(math.nan, description="C = exp of the log-log intercept")
    residual: float = math.nan
    points: int = 0
    valid: bool = False
    notes: List[str] = Field(default_factory=list)


class NumericalRangeGap(BaseModel):
    """Sampled distance between two numerical ranges."""

    delta: float = Field(..., ge=0)
    theta: float
    overlapping: bool


class SepReport(BaseModel):
    """sep and its two lower bounds for one pair (L₁, L₂)."""

    seed: Optional[int] = None
    sep_exact: float
    sep_operator_sampled: float = math.nan
    bound_pseudo: float
    bound_pseudo_certified: float = math.nan
    bound_numrange: Optional[float] = None
    contour_center: Tuple[float, float]
    contour_radius: float
    contour_nodes: int
    epsilons: Tuple[float, float]
    contour_error: float = math.nan
    semigroup_error: float = math.nan
    flags: List[str] = Field(default_factory=list)

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "seed", "sep_exact", "sep_operator_sampled", "bound_pseudo",
        "bound_pseudo_certified", "bound_numrange", "contour_radius",
        "contour_nodes", "eps1", "eps2", "contour_error", "semigroup_error", "flags",
    )


class StepDiagnostics(BaseModel):
    """Krylov step diagnostics for a tracked simple eigenpair."""

    run: int = 0
    method: Literal["arnoldi", "bilanczos"]
    ell: int
    ritz_values: List[Tuple[float, float]] = Field(default_factory=list, description="(re, im) pairs")
    eig_error: float = math.nan
    ritz_defect: float = math.nan
    gap: float = math.nan
    middle: float = math.nan
    identity_lhs: float = math.nan
    identity_rhs: float = math.nan
    beta_product: float = math.nan
    eps_estimate: float = math.nan
    lemma_lhs: float = math.nan
    lemma_rhs: float = math.nan
    projected_norm: float = math.nan
    unconverged: bool = False
    flags: List[str] = Field(default_factory=list)

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = (
        "run", "method", "ell", "eig_error", "ritz_defect", "gap", "middle",
        "identity_lhs", "identity_rhs", "beta_product", "eps_estimate",
        "lemma_lhs", "lemma_rhs", "unconverged", "flags",
    )


class CheckResult(BaseModel):
    """Outcome of one check; advisory checks are reported but do not fail a study."""

    name: str
    passed: bool
    value: Optional[float] = None
    detail: str = ""
    asserted: bool = True

    CSV_COLUMNS: ClassVar[Tuple[str, ...]] = ("name", "passed", "value", "detail")


class StudySummary(BaseModel):
    """summary.json document."""

    schema_version: int = Field(1, serialization_alias="schema")
    kind: str
    config: Dict
    defaults: Dict
    rate_fits: List[RateFit] = Field(default_factory=list)
    fitted_constants: Dict[str, float] = Field(default_factory=dict)
    checks: List[CheckResult] = Field(default_factory=list)
    failures: List[str] = Field(default_factory=list)
    diagnostics: List[Dict] = Field(default_factory=list)
    passed: bool = True
