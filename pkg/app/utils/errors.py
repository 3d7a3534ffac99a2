"""
Error types raised by the laboratory.
Every domain failure carries a readable detail plus the numbers behind it.
"""

from typing import Any, Dict


class LabError(Exception):
    """Base class for all domain failures."""

    code = "lab_error"

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extras = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.detail} ({extras})"


class NonFiniteInputError(LabError):
    code = "non_finite"


class ShapeError(LabError):
    code = "shape"


class SingularMatrixError(LabError):
    code = "singular"


class RankDeficientError(LabError):
    code = "rank_deficient"


class AmbiguousRankError(LabError):
    code = "ambiguous_rank"


class GramMismatchError(LabError):
    code = "gram_mismatch"


class NotIdempotentError(LabError):
    code = "not_idempotent"


class InfSupError(LabError):
    """A pencil block is singular: the discrete inf-sup condition fails."""

    code = "inf_sup"


class SpectralHitError(LabError):
    code = "spectral_hit"


class ContourError(LabError):
    """Eigenvalues sit on the contour or on the wrong side of it."""

    code = "contour"


class QuadratureError(LabError):
    code = "quadrature"


class SizeLimitError(LabError):
    code = "size_limit"


class SpectraOverlapError(LabError):
    code = "spectra_overlap"


class NumericalRangeOverlapError(LabError):
    code = "numrange_overlap"


class ExactCaptureError(LabError):
    """The target subspace already lies in the trial space."""

    code = "exact_capture"


class ClusterMismatchError(LabError):
    code = "cluster_mismatch"


class KrylovError(LabError):
    code = "krylov"


class UnconvergedError(LabError):
    code = "unconverged"


class CoefficientError(LabError):
    """Unknown expression name or advection field not vanishing on the boundary."""

    code = "coefficients"
