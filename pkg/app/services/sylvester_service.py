"""
Sylvester equation and separation service.
Solves L₁S − SL₂ = M by linearization, contour and semigroup representations,
and computes sep(L₁, L₂) together with its pseudospectral and numerical-range bounds.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import Settings, get_settings
from app.models.operators import Contour, Gram
from app.models.schemas import NumericalRangeGap, SepReport
from app.services.spectral_service import SpectralService
from app.utils import densekit
from app.utils.errors import (
    ContourError,
    NumericalRangeOverlapError,
    QuadratureError,
    ShapeError,
    SizeLimitError,
    SpectraOverlapError,
)
from app.utils.quadrature import composite_gauss_legendre
from app.utils.validators import as_matrix, require_square

logger = logging.getLogger(__name__)


class SylvesterService:
    """Service for Sylvester solvers and sep lower bounds."""

    def __init__(self, settings: Optional[Settings] = None, spectral_service: Optional[SpectralService] = None):
        """Initialize with quadrature settings."""
        self.settings = settings or get_settings()
        self.spectral = spectral_service or SpectralService(self.settings)
        self.overlap_tol = 1e-8

    # ------------------------------------------------------------------
    # sep
    # ------------------------------------------------------------------

    def sep_bruteforce(self, l1, l2) -> float:
        """
        Frobenius-norm sep: smallest singular value of S ↦ L₁S − SL₂.

        Raises:
            SizeLimitError: If n₁·n₂ exceeds the configured cap
        """
        operator = self._linearized(*self._pair(l1, l2))
        return densekit.smallest_singular_value(operator)

    def sep_operator_sampled(self, l1, l2, samples: Optional[int] = None, seed: int = 0) -> float:
        """
        Sampled operator-norm sep, an upper estimate of inf ‖L₁S − SL₂‖₂ / ‖S‖₂.

        Candidates are the Frobenius minimizer and the solutions for random
        rank-one right-hand sides x·y*.
        """
        a, b = self._pair(l1, l2)
        n1, n2 = a.shape[0], b.shape[0]
        operator = self._linearized(a, b)
        _, values, right = densekit.svd(operator)
        if values[-1] == 0.0:
            return 0.0

        candidates = [right[:, -1].reshape((n1, n2), order="F")]
        rng = np.random.default_rng(seed)
        for _ in range(samples or self.settings.SEP_OPERATOR_SAMPLES):
            x = rng.standard_normal(n1) + 1j * rng.standard_normal(n1)
            y = rng.standard_normal(n2) + 1j * rng.standard_normal(n2)
            rhs = np.outer(x / np.linalg.norm(x), (y / np.linalg.norm(y)).conj())
            solution = densekit.solve_linear(operator, rhs.reshape(-1, order="F"))
            candidates.append(solution.reshape((n1, n2), order="F"))

        ratios = [densekit.norm2(a @ s - s @ b) / densekit.norm2(s) for s in candidates]
        return float(min(ratios))

    def sep_lower_pseudo(self, l1, l2, contour: Contour, certified: bool = False) -> float:
        """
        Pseudospectral lower bound 2π·ε₁·ε₂ / length(Γ₂).

        Raises:
            ContourError: If the contour does not separate σ(L₂) (inside) from σ(L₁)
        """
        eps1, eps2 = self.contour_epsilons(l1, l2, contour, certified=certified)
        return 2.0 * math.pi * eps1 * eps2 / contour.arc_length

    def contour_epsilons(self, l1, l2, contour: Contour, certified: bool = False) -> Tuple[float, float]:
        """(ε₁, ε₂) on the contour, node-sampled or certified on the whole circle."""
        a, b = self._pair(l1, l2)
        self._check_enclosure(a, b, contour)
        level = self.spectral.certified_epsilon if certified else self.spectral.epsilon_on_contour
        eps1 = level(a, contour, Gram.identity(a.shape[0]))
        eps2 = level(b, contour, Gram.identity(b.shape[0]))
        return eps1, eps2

    # ------------------------------------------------------------------
    # solvers
    # ------------------------------------------------------------------

    def sylvester_oracle(self, l1, l2, rhs) -> np.ndarray:
        """
        Direct linearized solve of L₁S − SL₂ = M.

        Raises:
            SpectraOverlapError: If σ(L₁) and σ(L₂) are closer than 1e-8
        """
        a, b = self._pair(l1, l2)
        m = self._rhs(rhs, a, b)
        self._check_disjoint(a, b)
        solution = densekit.solve_linear(self._linearized(a, b), m.reshape(-1, order="F"))
        s = solution.reshape(m.shape, order="F")

        residual = densekit.norm2(a @ s - s @ b - m)
        allowed = 1e-10 * (densekit.norm2(a) + densekit.norm2(b)) * max(densekit.norm2(s), 1e-300)
        if residual > allowed:
            logger.warning(f"Sylvester oracle residual {residual:.2e} exceeds {allowed:.2e}")
        return s

    def sylvester_solve(self, l1, l2, rhs) -> np.ndarray:
        """Bartels–Stewart solve of L₁S − SL₂ = M (Schur forms, no Kronecker matrix)."""
        a, b = self._pair(l1, l2, limit=False)
        m = self._rhs(rhs, a, b)
        self._check_disjoint(a, b)
        return sla.solve_sylvester(a, -b, m)

    def sylvester_contour(self, l1, l2, rhs, contour: Contour) -> np.ndarray:
        """
        S = (1/2πi)∮(L₁ − z)⁻¹M(z − L₂)⁻¹dz with Γ enclosing σ(L₂) and excluding σ(L₁).

        Node count doubles until successive approximations agree to the contour tolerance.

        Raises:
            ContourError: If the enclosure condition fails
            QuadratureError: If the maximum node count is reached first
        """
        a, b = self._pair(l1, l2, limit=False)
        m = self._rhs(rhs, a, b)
        self._check_enclosure(a, b, contour)
        if not np.any(m):
            return np.zeros_like(m)

        nodes = contour.nodes
        total = self._contour_sum(a, b, m, contour, 2.0 * np.pi * np.arange(nodes) / nodes)
        current = total / nodes
        while 2 * nodes <= self.settings.CONTOUR_MAX_NODES:
            midpoints = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
            total = total + self._contour_sum(a, b, m, contour, midpoints)
            nodes *= 2
            refined = total / nodes
            change = densekit.norm2(refined - current)
            current = refined
            if change <= self.settings.CONTOUR_TOL * densekit.norm2(refined):
                logger.debug(f"Sylvester contour converged at q={nodes}")
                return current
        raise QuadratureError("Sylvester contour quadrature did not converge", nodes=nodes)

    def sylvester_semigroup(
        self,
        l1,
        l2,
        rhs,
        t_max: Optional[float] = None,
        steps: Optional[int] = None,
        tail_tol: Optional[float] = None,
    ) -> np.ndarray:
        """
        S = e^{−iθ}∫₀^T e^{−tL̂₁} M e^{tL̂₂} dt with L̂ᵢ = e^{−iθ}(Lᵢ − ẑ₁).

        θ and ẑ₁ come from the numerical-range geometry: θ maximizes the sampled
        separation and ẑ₁ is the contact point of 𝔴(L₁) in that direction, so
        Re 𝔴(L̂₁) ≥ 0 and Re 𝔴(L̂₂) ≤ −Δ. T defaults to log(1/tail_tol)/Δ, so the
        truncated tail e^{−TΔ}‖M‖/Δ is at most tail_tol·‖M‖/Δ. The target is
        relative to ‖M‖/Δ, the bound on ‖S‖ itself, not an absolute error.

        Raises:
            NumericalRangeOverlapError: If Δ ≤ 0
        """
        a, b = self._pair(l1, l2, limit=False)
        m = self._rhs(rhs, a, b)
        gap = self.numrange_distance(a, b)
        if gap.overlapping:
            raise NumericalRangeOverlapError("Numerical ranges overlap; semigroup representation invalid")
        if not np.any(m):
            return np.zeros_like(m)

        theta, delta = gap.theta, gap.delta
        rotation = np.exp(-1j * theta)
        contact = self.contact_point(a, theta)
        hat1 = rotation * (a - contact * np.eye(a.shape[0]))
        hat2 = rotation * (b - contact * np.eye(b.shape[0]))

        if t_max is None:
            t_max = math.log(1.0 / (tail_tol or self.settings.SEMIGROUP_TAIL_TOL)) / delta
        nodes, weights = composite_gauss_legendre(
            self.settings.SEMIGROUP_PANEL_NODES,
            steps or self.settings.SEMIGROUP_PANELS,
            0.0,
            t_max,
        )
        integral = np.zeros_like(m)
        for t, w in zip(nodes, weights):
            integral += w * (sla.expm(-t * hat1) @ m @ sla.expm(t * hat2))
        logger.debug(f"Semigroup quadrature: T={t_max:.3f}, tail ≤ {self.semigroup_tail_bound(m, delta, t_max):.2e}")
        return rotation * integral

    @staticmethod
    def semigroup_tail_bound(rhs: np.ndarray, delta: float, t_max: float) -> float:
        """e^{−TΔ}·‖M‖/Δ."""
        return math.exp(-t_max * delta) * densekit.norm2(rhs) / delta

    # ------------------------------------------------------------------
    # numerical range
    # ------------------------------------------------------------------

    def numerical_range_support(self, operator, theta: float) -> float:
        """max Re(e^{−iθ}𝔴(L)): the top eigenvalue of the Hermitian part of e^{−iθ}L."""
        l_matrix = as_matrix(operator, "L")
        require_square(l_matrix, "L")
        rotated = np.exp(-1j * theta) * l_matrix
        return float(sla.eigvalsh(0.5 * (rotated + rotated.conj().T))[-1])

    def contact_point(self, operator, theta: float) -> complex:
        """Point of 𝔴(L) minimizing Re(e^{−iθ}z)."""
        l_matrix = as_matrix(operator, "L")
        rotated = np.exp(-1j * theta) * l_matrix
        _, vectors = sla.eigh(0.5 * (rotated + rotated.conj().T))
        x = vectors[:, 0]
        return complex(x.conj() @ l_matrix @ x)

    def numrange_distance(self, l1, l2, samples: Optional[int] = None) -> NumericalRangeGap:
        """
        Sampled distance Δ between 𝔴(L₁) and 𝔴(L₂) with the maximizing direction θ*.

        θ* points from 𝔴(L₂) towards 𝔴(L₁). Sampling only lower-bounds the true distance.
        Separations within NUMRANGE_TOL·max(‖L₁‖, ‖L₂‖) of zero count as overlap, so
        touching or identical ranges report Δ = 0.
        """
        samples = samples or self.settings.NUMRANGE_SAMPLES
        if samples < 64:
            raise ShapeError("numrange_distance needs at least 64 sampled directions", samples=samples)
        first, second = as_matrix(l1, "L1"), as_matrix(l2, "L2")
        thetas = 2.0 * np.pi * np.arange(samples) / samples
        separations = np.array([
            -self.numerical_range_support(first, theta + np.pi) - self.numerical_range_support(second, theta)
            for theta in thetas
        ])
        best = int(np.argmax(separations))
        scale = max(densekit.norm2(first), densekit.norm2(second))
        overlapping = float(separations[best]) <= self.settings.NUMRANGE_TOL * scale
        delta = 0.0 if overlapping else float(separations[best])
        return NumericalRangeGap(delta=delta, theta=float(thetas[best]), overlapping=overlapping)

    # ------------------------------------------------------------------
    # report
    # ------------------------------------------------------------------

    def sep_report(self, l1, l2, contour: Contour, rhs=None, seed: Optional[int] = None) -> SepReport:
        """sep, both lower bounds and solver cross-checks for one pair."""
        a, b = self._pair(l1, l2)
        eps1, eps2 = self.contour_epsilons(a, b, contour)
        certified = self.contour_epsilons(a, b, contour, certified=True)
        gap = self.numrange_distance(a, b)
        report = SepReport(
            seed=seed,
            sep_exact=self.sep_bruteforce(a, b),
            sep_operator_sampled=self.sep_operator_sampled(a, b, seed=seed or 0),
            bound_pseudo=2.0 * math.pi * eps1 * eps2 / contour.arc_length,
            bound_pseudo_certified=2.0 * math.pi * certified[0] * certified[1] / contour.arc_length,
            bound_numrange=None if gap.overlapping else gap.delta,
            contour_center=(contour.center.real, contour.center.imag),
            contour_radius=contour.radius,
            contour_nodes=contour.nodes,
            epsilons=(eps1, eps2),
        )

        if rhs is not None:
            oracle = self.sylvester_oracle(a, b, rhs)
            scale = max(densekit.norm2(oracle), 1e-300)
            report.contour_error = densekit.norm2(self.sylvester_contour(a, b, rhs, contour) - oracle) / scale
            if not gap.overlapping:
                report.semigroup_error = densekit.norm2(self.sylvester_semigroup(a, b, rhs) - oracle) / scale
            else:
                report.flags.append("numrange_overlap")
        return report

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _pair(self, l1, l2, limit: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        a = as_matrix(l1, "L1")
        b = as_matrix(l2, "L2")
        require_square(a, "L1")
        require_square(b, "L2")
        if limit and a.shape[0] * b.shape[0] > self.settings.SEP_MAX_PRODUCT:
            raise SizeLimitError(
                "n1·n2 exceeds the linearization cap",
                n1=a.shape[0],
                n2=b.shape[0],
                cap=self.settings.SEP_MAX_PRODUCT,
            )
        return a, b

    @staticmethod
    def _rhs(rhs, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        m = as_matrix(rhs, "M")
        if m.shape != (a.shape[0], b.shape[0]):
            raise ShapeError("M must be n1×n2", shape=m.shape)
        return m

    @staticmethod
    def _linearized(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Matrix of vec(S) ↦ vec(L₁S − SL₂) in column-major vec ordering."""
        return np.kron(np.eye(b.shape[0]), a) - np.kron(b.T, np.eye(a.shape[0]))

    def _check_disjoint(self, a: np.ndarray, b: np.ndarray) -> None:
        distance = float(np.min(np.abs(sla.eigvals(a)[:, None] - sla.eigvals(b)[None, :])))
        if distance <= self.overlap_tol:
            raise SpectraOverlapError("Spectra of L1 and L2 overlap", min_distance=distance)

    def _check_enclosure(self, a: np.ndarray, b: np.ndarray, contour: Contour) -> None:
        inner = sla.eigvals(b)
        outer = sla.eigvals(a)
        outside = inner[~contour.encloses(inner)]
        inside = outer[contour.encloses(outer)]
        if outside.size or inside.size:
            raise ContourError(
                "Contour must enclose σ(L2) and exclude σ(L1)",
                l2_outside=[complex(z) for z in outside],
                l1_inside=[complex(z) for z in inside],
            )
        self.spectral.check_clear_of_contour(a, contour)
        self.spectral.check_clear_of_contour(b, contour)

    def _contour_sum(self, a, b, m, contour: Contour, angles: np.ndarray) -> np.ndarray:
        total = np.zeros_like(m)
        eye1 = np.eye(a.shape[0])
        eye2 = np.eye(b.shape[0])
        for angle in angles:
            offset = contour.radius * np.exp(1j * angle)
            z = contour.center + offset
            left = densekit.solve_linear(a - z * eye1, m)
            # X (z − L₂)⁻¹ = ((z − L₂)ᵀ)⁻¹ Xᵀ transposed
            total += offset * densekit.solve_linear((z * eye2 - b).T, left.T).T
        return total
