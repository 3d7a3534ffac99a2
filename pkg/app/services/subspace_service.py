"""
Subspace geometry service.
Canonical angles, containment gap, oblique projectors and nearest frames.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import Settings, get_settings
from app.models.operators import Gram, Subspace
from app.utils import densekit
from app.utils.errors import GramMismatchError, InfSupError, RankDeficientError, ShapeError
from app.utils.validators import as_matrix, require_idempotent, require_rows, require_square

logger = logging.getLogger(__name__)


class SubspaceService:
    """Service for gap metrics and projectors in a Gram-weighted inner product."""

    def __init__(self, settings: Optional[Settings] = None):
        """Initialize with tolerances."""
        self.settings = settings or get_settings()
        # below this sine the cosine formula is replaced by the residual norm
        self.small_angle = 1e-4

    def orthonormalize(self, raw_frame, gram: Gram) -> Subspace:
        """
        G-orthonormal frame with the same column span.

        Args:
            raw_frame: n×k frame of full column rank under G
            gram: Inner product

        Returns:
            Subspace whose j-th column lies in the span of the first j raw columns

        Raises:
            RankDeficientError: If the frame is numerically rank deficient
        """
        raw = as_matrix(raw_frame, "raw_frame", allow_empty_cols=True)
        require_rows(raw, gram.n, "raw_frame")
        if raw.shape[1] == 0:
            return Subspace(frame=raw, gram=gram)

        weighted = gram.factor @ raw
        values = densekit.singular_values(weighted)
        rank = densekit.numerical_rank(values, weighted.shape)
        if rank < raw.shape[1]:
            raise RankDeficientError(
                "Frame is rank deficient under the Gram",
                rank=rank,
                columns=raw.shape[1],
            )

        q, r = np.linalg.qr(weighted)
        phases = np.diag(r) / np.abs(np.diag(r))
        q = q * phases
        frame = sla.solve_triangular(gram.factor, q)
        return Subspace(frame=frame, gram=gram)

    def span(self, vectors, gram: Gram) -> Subspace:
        """Orthonormalized span of possibly dependent vectors (numerical-rank columns kept)."""
        raw = as_matrix(vectors, "vectors", allow_empty_cols=True)
        if raw.shape[1] == 0:
            return Subspace(frame=raw, gram=gram)
        weighted = gram.factor @ raw
        left, values, _ = densekit.svd(weighted)
        rank = densekit.numerical_rank(values, weighted.shape)
        return Subspace(frame=sla.solve_triangular(gram.factor, left[:, :rank]), gram=gram)

    def containment_gap(self, first: Subspace, second: Subspace) -> float:
        """
        δ(M, N) = sin of the largest canonical angle from M into N.

        Returns exactly 1 when dim N < dim M and 0 when M is empty.

        Raises:
            GramMismatchError: If the subspaces use different inner products
        """
        self._require_same_gram(first, second)
        if first.dim == 0:
            return 0.0
        if second.dim < first.dim:
            return 1.0

        cosines = densekit.singular_values(first.gram.inner(first.frame, second.frame))
        smallest = min(float(cosines[first.dim - 1]), 1.0)
        gap = float(np.sqrt(max(0.0, 1.0 - smallest ** 2)))

        if gap < self.small_angle:
            residual = first.frame - second.frame @ second.gram.inner(second.frame, first.frame)
            gap = densekit.frame_norm(residual, first.gram.factor)
        return min(gap, 1.0)

    def oblique_projector(self, range_space: Subspace, test_space: Subspace) -> np.ndarray:
        """
        Projector Q with Ran(Q) = range and ⟨test, v − Qv⟩_G = 0.

        Raises:
            InfSupError: If the cross-Gram test*·G·range is singular
        """
        self._require_same_gram(range_space, test_space)
        if range_space.dim != test_space.dim:
            raise InfSupError(
                "Range and test spaces must have equal dimension",
                range_dim=range_space.dim,
                test_dim=test_space.dim,
            )
        gram = range_space.gram
        cross = gram.inner(test_space.frame, range_space.frame)
        smallest = densekit.smallest_singular_value(cross)
        if smallest <= self.settings.RANK_TOL * max(cross.shape):
            raise InfSupError(
                "Cross-Gram of test and range spaces is singular",
                smallest_singular_value=smallest,
            )
        coupling = densekit.solve_linear(cross, test_space.frame.conj().T @ gram.matrix)
        return range_space.frame @ coupling

    def projector_norms(self, projector, gram: Gram) -> Tuple[float, float]:
        """
        G-operator norms of Z and I − Z.

        Raises:
            NotIdempotentError: If Z² ≠ Z
        """
        z = as_matrix(projector, "Z")
        require_square(z, "Z")
        require_rows(z, gram.n, "Z")
        # R Z R⁻¹ carries the G-operator norm over to the spectral norm
        similar = gram.factor @ z @ sla.solve_triangular(gram.factor, np.eye(gram.n, dtype=np.complex128))
        norm_z = densekit.norm2(similar)
        require_idempotent(similar, self.settings.IDEMPOTENT_TOL, scale=max(norm_z, 1.0))
        return norm_z, densekit.norm2(np.eye(gram.n) - similar)

    def nearest_frame(self, source: Subspace, target: Subspace) -> np.ndarray:
        """
        Orthonormal frame in T closest to the frame of S.

        The polar factor of the cross-Gram T*S maps each principal vector of S
        to its partner in T, so intersection directions come back unchanged and
        ‖S − 𝐓‖₂ ≤ √2·δ(S, T).

        Raises:
            ShapeError: If dim T < dim S or the Gram is not Euclidean
        """
        self._require_same_gram(source, target)
        if not np.allclose(source.gram.matrix, np.eye(source.n), atol=self.settings.HERMITIAN_TOL):
            raise ShapeError("nearest_frame needs the Euclidean inner product")
        if target.dim < source.dim:
            raise ShapeError(
                "Target subspace is smaller than the source",
                source_dim=source.dim,
                target_dim=target.dim,
            )
        if source.dim == 0:
            return source.frame.copy()

        cross = target.frame.conj().T @ source.frame
        left, cosines, right = densekit.svd(cross)
        logger.debug(f"nearest_frame: smallest principal cosine {cosines[-1]:.3e}")
        return target.frame @ left @ right.conj().T

    def _require_same_gram(self, first: Subspace, second: Subspace) -> None:
        if not first.gram.same_as(second.gram):
            raise GramMismatchError(
                "Subspaces carry different Gram matrices",
                labels=(first.gram.label, second.gram.label),
            )
