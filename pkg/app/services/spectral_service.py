"""
Spectral service: resolvents, contour-restricted pseudospectral levels and
Dunford spectral projectors.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import Settings, get_settings
from app.models.operators import Contour, Gram, Subspace
from app.utils import densekit
from app.utils.errors import AmbiguousRankError, ContourError, QuadratureError, SpectralHitError
from app.utils.validators import as_matrix, require_idempotent, require_rows, require_square

logger = logging.getLogger(__name__)


class SpectralService:
    """Service for contour integrals of the resolvent."""

    def __init__(self, settings: Optional[Settings] = None):
        """Initialize with contour quadrature configuration."""
        self.settings = settings or get_settings()
        self.max_nodes = self.settings.CONTOUR_MAX_NODES
        self.tolerance = self.settings.CONTOUR_TOL

    def resolvent_norm(self, operator, z: complex, gram: Gram) -> float:
        """
        ‖(z − L)⁻¹‖ in the G-operator norm.

        Raises:
            SpectralHitError: If z is (numerically) an eigenvalue of L
        """
        similar = self._similar(operator, gram)
        return 1.0 / self._smallest_shifted_singular_value(similar, z)

    def dunford_projector(self, operator, contour: Contour, gram: Gram) -> np.ndarray:
        """
        Spectral projector (1/2πi)∮(z − L)⁻¹dz by the trapezoidal rule.

        The node count starts at contour.nodes and doubles until successive
        projectors agree to the contour tolerance.

        Raises:
            ContourError: If an eigenvalue lies on the circle
            QuadratureError: If the maximum node count is reached first
        """
        projector, _ = self.dunford(operator, contour, gram)
        return projector

    def dunford(self, operator, contour: Contour, gram: Gram) -> Tuple[np.ndarray, int]:
        """Dunford projector together with the node count it converged at."""
        l_matrix = self._square(operator, gram)
        self.check_clear_of_contour(l_matrix, contour)

        nodes = contour.nodes
        angles = 2.0 * np.pi * np.arange(nodes) / nodes
        total = self._trapezoid_sum(l_matrix, contour, angles)
        projector = total / nodes

        while True:
            if 2 * nodes > self.max_nodes:
                raise QuadratureError(
                    "Dunford quadrature did not converge",
                    nodes=nodes,
                    max_nodes=self.max_nodes,
                )
            # the refined rule reuses the current nodes and adds the midpoints
            midpoints = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
            total = total + self._trapezoid_sum(l_matrix, contour, midpoints)
            nodes *= 2
            refined = total / nodes
            change = densekit.weighted_norm(refined - projector, gram.factor)
            scale = max(1.0, densekit.weighted_norm(refined, gram.factor))
            projector = refined
            logger.debug(f"Dunford projector: q={nodes}, change={change:.2e}")
            if change <= self.tolerance * scale:
                return projector, nodes

    def invariant_subspace(self, projector, gram: Gram) -> Subspace:
        """
        G-orthonormal frame for Ran(E); its dimension is the multiplicity m.

        Raises:
            NotIdempotentError: If E² ≠ E
            AmbiguousRankError: If a singular value sits within a factor 10 of the rank threshold
        """
        e = self._square(projector, gram)
        require_idempotent(e, 1e-9)

        similar = gram.factor @ e @ self._factor_inverse(gram)
        left, values, _ = densekit.svd(similar)
        if values[0] == 0.0:
            return Subspace(frame=np.zeros((gram.n, 0), dtype=np.complex128), gram=gram)

        threshold = densekit.rank_tolerance(float(values[0]), similar.shape)
        near = values[(values > threshold / 10.0) & (values < threshold * 10.0)]
        if near.size:
            raise AmbiguousRankError(
                "Projector rank is ambiguous at the numerical-rank threshold",
                threshold=threshold,
                singular_values=near.tolist(),
            )
        rank = int(np.sum(values > threshold))
        frame = sla.solve_triangular(gram.factor, left[:, :rank])
        return Subspace(frame=frame, gram=gram)

    def epsilon_on_contour(self, operator, contour: Contour, gram: Gram) -> float:
        """
        ε = 1 / max_j ‖(z_j − L)⁻¹‖ over the contour nodes.

        Only the nodes are certified; see certified_epsilon for the whole circle.
        """
        l_matrix = self._square(operator, gram)
        self.check_clear_of_contour(l_matrix, contour)
        similar = gram.factor @ l_matrix @ self._factor_inverse(gram)
        levels = [self._smallest_shifted_singular_value(similar, z) for z in contour.points()]
        return float(min(levels))

    def certified_epsilon(self, operator, contour: Contour, gram: Gram) -> float:
        """
        ε valid on the whole circle.

        σ_min(z − L) is 1-Lipschitz in z, so the node value drops by at most the
        distance from any point of the circle to its nearest node.
        """
        return max(0.0, self.epsilon_on_contour(operator, contour, gram) - contour.node_spacing)

    def place_contour(
        self,
        target: complex,
        excluded: Sequence[complex],
        radius_factor: Optional[float] = None,
        nodes: Optional[int] = None,
        exclude_origin: bool = True,
    ) -> Contour:
        """
        Circle around target leaving the excluded eigenvalues (and the origin) outside.

        The radius is radius_factor times the distance to the nearest excluded point.
        """
        if radius_factor is None:
            radius_factor = self.settings.CONTOUR_RADIUS_FACTOR
        points = [complex(z) for z in excluded]
        if exclude_origin:
            points.append(0.0)
        distances = [abs(z - target) for z in points if abs(z - target) > 0.0]
        reach = min(distances) if distances else max(abs(target), 1.0)
        return Contour(
            center=target,
            radius=radius_factor * reach,
            nodes=nodes or self.settings.CONTOUR_NODES,
        )

    def check_clear_of_contour(self, operator: np.ndarray, contour: Contour) -> np.ndarray:
        """
        Eigenvalues of L, after checking none lies within 1e-10·radius of the circle.

        Raises:
            ContourError: With the offending eigenvalue locations
        """
        eigenvalues = sla.eigvals(operator)
        too_close = eigenvalues[contour.distance_to_circle(eigenvalues) <= 1e-10 * contour.radius]
        if too_close.size:
            raise ContourError(
                "Eigenvalue lies on the contour",
                eigenvalues=[complex(z) for z in too_close],
            )
        return eigenvalues

    def _trapezoid_sum(self, operator: np.ndarray, contour: Contour, angles: np.ndarray) -> np.ndarray:
        n = operator.shape[0]
        identity = np.eye(n, dtype=np.complex128)
        total = np.zeros((n, n), dtype=np.complex128)
        # fixed summation order by node index
        for angle in angles:
            offset = contour.radius * np.exp(1j * angle)
            z = contour.center + offset
            total += offset * densekit.solve_linear(z * identity - operator, identity)
        return total

    def _smallest_shifted_singular_value(self, similar: np.ndarray, z: complex) -> float:
        shifted = z * np.eye(similar.shape[0]) - similar
        values = densekit.singular_values(shifted)
        if values[-1] <= self.settings.SINGULAR_TOL * max(values[0], 1.0):
            raise SpectralHitError("Shift lies on the spectrum", z=complex(z), sigma_min=float(values[-1]))
        return float(values[-1])

    def _square(self, operator, gram: Gram) -> np.ndarray:
        l_matrix = as_matrix(operator, "L")
        require_square(l_matrix, "L")
        require_rows(l_matrix, gram.n, "L")
        return l_matrix

    def _similar(self, operator, gram: Gram) -> np.ndarray:
        l_matrix = self._square(operator, gram)
        return gram.factor @ l_matrix @ self._factor_inverse(gram)

    @staticmethod
    def _factor_inverse(gram: Gram) -> np.ndarray:
        return sla.solve_triangular(gram.factor, np.eye(gram.n, dtype=np.complex128))
