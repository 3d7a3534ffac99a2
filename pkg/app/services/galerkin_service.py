"""
Galerkin approximation service.
Assembles Petrov-Galerkin pencils on a reference problem, builds the projections
Q_h and P_h (and their adjoint counterparts) and computes the superconvergence
diagnostics of one approximation level.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import Settings, get_settings
from app.models.operators import (
    DiscreteEigenpairs,
    GalerkinSetup,
    Gram,
    ReferenceProblem,
    Subspace,
    TargetEigenpair,
)
from app.models.schemas import StudyRecord
from app.services.spectral_service import SpectralService
from app.services.subspace_service import SubspaceService
from app.utils import densekit
from app.utils.errors import (
    ClusterMismatchError,
    ExactCaptureError,
    InfSupError,
    LabError,
    RankDeficientError,
    ShapeError,
    SingularMatrixError,
)
from app.utils.validators import as_matrix, require_rows

logger = logging.getLogger(__name__)


class GalerkinService:
    """Service for Galerkin pencils and their eigenvector diagnostics."""

    def __init__(
        self,
        settings: Optional[Settings] = None,
        subspace_service: Optional[SubspaceService] = None,
        spectral_service: Optional[SpectralService] = None,
    ):
        """Initialize with collaborating services."""
        self.settings = settings or get_settings()
        self.subspaces = subspace_service or SubspaceService(self.settings)
        self.spectral = spectral_service or SpectralService(self.settings)
        self.deflation_tol = 1e-12
        self.capture_tol = 1e-13

    # ------------------------------------------------------------------
    # pencil
    # ------------------------------------------------------------------

    def assemble(self, reference: ReferenceProblem, trial_raw, test_raw, h: Optional[float] = None) -> GalerkinSetup:
        """
        Assemble A_h[i][j] = ⟨ψ_i, Aφ_j⟩_H and B_h[i][j] = ⟨ψ_i, φ_j⟩_H.

        Frames are stored as given; the pencil depends on the basis, the projectors do not.

        Raises:
            ShapeError: If the frames disagree in shape
            RankDeficientError: If a frame is rank deficient
        """
        trial = as_matrix(trial_raw, "trial")
        test = as_matrix(test_raw, "test")
        require_rows(trial, reference.n, "trial")
        require_rows(test, reference.n, "test")
        if trial.shape[1] != test.shape[1]:
            raise ShapeError("Trial and test frames need equal column counts", trial=trial.shape, test=test.shape)
        if trial.shape[1] > reference.n:
            raise ShapeError("Subspace dimension exceeds the reference dimension", N=trial.shape[1])

        factor = reference.gram_h.factor
        for name, frame in (("trial", trial), ("test", test)):
            weighted = factor @ frame
            rank = densekit.numerical_rank(densekit.singular_values(weighted), weighted.shape)
            if rank < frame.shape[1]:
                raise RankDeficientError(f"{name} frame is rank deficient", rank=rank, columns=frame.shape[1])

        weighted_test = test.conj().T @ reference.gram_h.matrix
        return GalerkinSetup(
            reference=reference,
            trial=trial,
            test=test,
            a_h=weighted_test @ reference.a_ref @ trial,
            b_h=weighted_test @ trial,
            h=h,
        )

    def solve_pencil(self, setup: GalerkinSetup) -> DiscreteEigenpairs:
        """
        Discrete eigenpairs (λ_h, v_h = Φy) of A_h y = λ_h B_h y.

        Raises:
            InfSupError: If B_h is singular
        """
        try:
            decomposition = densekit.eig_generalized(setup.a_h, setup.b_h)
        except SingularMatrixError as exc:
            raise InfSupError("Mass matrix B_h is singular", **exc.context) from exc

        vectors = setup.trial @ decomposition.right_vectors
        norms = np.linalg.norm(setup.reference.gram_h.factor @ vectors, axis=0)
        vectors = vectors / norms

        residual = setup.test.conj().T @ setup.reference.gram_h.matrix @ (
            setup.reference.a_ref @ vectors - vectors * decomposition.values
        )
        worst = float(np.max(np.abs(residual))) if residual.size else 0.0
        scale = max(1.0, densekit.norm2(setup.a_h))
        if worst > 1e-9 * scale:
            logger.warning(f"Galerkin residual {worst:.2e} above tolerance")

        return DiscreteEigenpairs(
            values=decomposition.values,
            coefficients=decomposition.right_vectors,
            vectors=vectors,
        )

    def shifted_pencil(self, setup: GalerkinSetup, tau: complex) -> DiscreteEigenpairs:
        """
        Eigenpairs of A_h y = λ̂ (B_h + τA_h) y, where 1/λ̂ = 1/λ_h + τ.

        Raises:
            InfSupError: If B_h + τA_h is singular
        """
        shifted_mass = setup.b_h + tau * setup.a_h
        try:
            decomposition = densekit.eig_generalized(setup.a_h, shifted_mass)
        except SingularMatrixError as exc:
            raise InfSupError("Shifted mass matrix B_h + τA_h is singular", tau=complex(tau), **exc.context) from exc
        vectors = setup.trial @ decomposition.right_vectors
        vectors = vectors / np.linalg.norm(setup.reference.gram_h.factor @ vectors, axis=0)
        return DiscreteEigenpairs(
            values=decomposition.values,
            coefficients=decomposition.right_vectors,
            vectors=vectors,
        )

    @staticmethod
    def unshift(values: np.ndarray, tau: complex) -> np.ndarray:
        """λ_h recovered from λ̂ through 1/λ_h = 1/λ̂ − τ."""
        values = np.asarray(values, dtype=np.complex128)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / (1.0 / values - tau)

    def infsup_constants(self, setup: GalerkinSetup) -> Tuple[float, float]:
        """
        (β(h), β̊(h)).

        β̊ uses G_H-orthonormal frames and the H inner product; β uses
        G_V-orthonormal frames and the form a(u, v) = ⟨u, Av⟩_H, which is the
        singular-value realization of the V inf-sup constant.
        """
        reference = setup.reference
        trial_h = self.subspaces.orthonormalize(setup.trial, reference.gram_h).frame
        test_h = self.subspaces.orthonormalize(setup.test, reference.gram_h).frame
        beta_ring = densekit.smallest_singular_value(reference.gram_h.inner(test_h, trial_h))

        trial_v = self.subspaces.orthonormalize(setup.trial, reference.gram_v).frame
        test_v = self.subspaces.orthonormalize(setup.test, reference.gram_v).frame
        beta = densekit.smallest_singular_value(test_v.conj().T @ reference.gram_h.matrix @ reference.a_ref @ trial_v)
        return beta, beta_ring

    def a_form_bound(self, reference: ReferenceProblem) -> float:
        """c₁ = sup |a(u, v)| / (‖u‖_V‖v‖_V), i.e. ‖A_ref‖ in V-normalized coordinates."""
        factor_v = reference.gram_v.factor
        identity = np.eye(reference.n, dtype=np.complex128)
        left = sla.solve_triangular(factor_v, identity, trans="C")
        right = sla.solve_triangular(factor_v, identity)
        return densekit.norm2(left @ reference.gram_h.matrix @ reference.a_ref @ right)

    # ------------------------------------------------------------------
    # projections
    # ------------------------------------------------------------------

    def build_Qh(self, setup: GalerkinSetup) -> np.ndarray:
        """Q_h = Φ B_h⁻¹ Ψ* G_H."""
        return setup.trial @ self._solve_block(setup.b_h, self._test_functional(setup), "B_h")

    def build_Ph(self, setup: GalerkinSetup) -> np.ndarray:
        """P_h = Φ A_h⁻¹ Ψ* G_H A_ref."""
        functional = self._test_functional(setup) @ setup.reference.a_ref
        return setup.trial @ self._solve_block(setup.a_h, functional, "A_h")

    def build_Qh_adjoint(self, setup: GalerkinSetup) -> np.ndarray:
        """Q_h* = Ψ B_h^{-H} Φ* G_H, the H-adjoint of Q_h."""
        functional = setup.trial.conj().T @ setup.reference.gram_h.matrix
        return setup.test @ self._solve_block(setup.b_h.conj().T, functional, "B_h*")

    def build_Ph_adjoint(self, setup: GalerkinSetup) -> np.ndarray:
        """P_h^a = Ψ A_h^{-H} Φ* A_ref* G_H: projection onto 𝒮₂ₕ along the a-adjoint complement of 𝒮₁ₕ."""
        reference = setup.reference
        functional = setup.trial.conj().T @ reference.a_ref.conj().T @ reference.gram_h.matrix
        return setup.test @ self._solve_block(setup.a_h.conj().T, functional, "A_h*")

    def discrete_operator(self, setup: GalerkinSetup) -> np.ndarray:
        """A_h^{op} = Q_h A_ref Q_h."""
        q = self.build_Qh(setup)
        return q @ setup.reference.a_ref @ q

    def apply_Qh(self, setup: GalerkinSetup, vectors: np.ndarray) -> np.ndarray:
        return setup.trial @ self._solve_block(setup.b_h, self._test_functional(setup) @ vectors, "B_h")

    def apply_Ph(self, setup: GalerkinSetup, vectors: np.ndarray) -> np.ndarray:
        functional = self._test_functional(setup) @ (setup.reference.a_ref @ vectors)
        return setup.trial @ self._solve_block(setup.a_h, functional, "A_h")

    # ------------------------------------------------------------------
    # targets
    # ------------------------------------------------------------------

    def make_target(
        self,
        reference: ReferenceProblem,
        guess: complex,
        radius_factor: Optional[float] = None,
        cluster_tol: float = 1e-8,
    ) -> TargetEigenpair:
        """
        Eigenvalue cluster of A_ref nearest guess, its invariant subspaces and contour.

        Eigenvalues within cluster_tol·max(1, |λ|) of the nearest one form the
        cluster. When its eigenvectors do not span m dimensions the Dunford
        projector over the contour supplies the invariant subspaces instead.
        """
        gram = reference.gram_h
        if reference.exact is not None and reference.exact.left_vectors is not None:
            decomposition = reference.exact
        else:
            decomposition = densekit.eig_dense(reference.a_ref, left=True)

        values = decomposition.values
        nearest = values[int(np.argmin(np.abs(values - guess)))]
        in_cluster = np.abs(values - nearest) <= cluster_tol * max(1.0, abs(nearest))
        cluster = values[in_cluster]
        center = complex(np.mean(cluster))
        contour = self.spectral.place_contour(center, values[~in_cluster], radius_factor)
        m = int(cluster.size)

        right = decomposition.right_vectors[:, in_cluster]
        left = decomposition.left_vectors[:, in_cluster]
        spanned = densekit.numerical_rank(densekit.singular_values(right), right.shape)
        if spanned == m:
            u = self.subspaces.orthonormalize(right, gram)
            # H-adjoint eigenvectors are G⁻¹y for Euclidean left eigenvectors y
            ustar = self.subspaces.orthonormalize(densekit.solve_linear(gram.matrix, left), gram)
        else:
            logger.info(f"Defective cluster at {center:.6g}: using the Dunford projector")
            projector = self.spectral.dunford_projector(reference.a_ref, contour, gram)
            u = self.spectral.invariant_subspace(projector, gram)
            adjoint = densekit.solve_linear(gram.matrix, projector.conj().T @ gram.matrix)
            ustar = self.spectral.invariant_subspace(adjoint, gram)

        a_u = reference.a_ref @ u.frame
        invariance = densekit.norm2(a_u - u.frame @ gram.inner(u.frame, a_u))
        if invariance > 1e-9 * max(1.0, densekit.norm2(reference.a_ref)):
            logger.warning(f"Target subspace invariance defect {invariance:.2e}")

        logger.info(f"Target λ={center:.10g} (m={m}), contour radius {contour.radius:.4g}")
        return TargetEigenpair(
            value=center,
            cluster_values=cluster,
            U=u,
            Ustar=ustar,
            m=m,
            contour=contour,
        )

    # ------------------------------------------------------------------
    # diagnostics
    # ------------------------------------------------------------------

    def superconvergence_functionals(self, setup: GalerkinSetup, target: TargetEigenpair) -> Tuple[float, float, float]:
        """
        (ε_H, ε̊_H, ε_V) restricted to the target subspace 𝒰.

        ε_H  = sup ‖Q_hA(I − Q_h)u‖_H / ‖(I − Π₁ₕ)u‖_H
        ε̊_H  = sup ‖(P_h − Q_h)u‖_H / ‖(I − Π₁ₕ)u‖_H
        ε_V  = sup ‖P_hT(I − P_h)u‖_V / ‖(I − Π₁ₕ^V)u‖_V

        Raises:
            ExactCaptureError: If 𝒰 ⊂ 𝒮₁ₕ
        """
        reference = setup.reference
        u = target.U.frame
        q_u = self.apply_Qh(setup, u)
        p_u = self.apply_Ph(setup, u)

        trial_h = self.subspaces.orthonormalize(setup.trial, reference.gram_h)
        trial_v = self.subspaces.orthonormalize(setup.trial, reference.gram_v)
        outside_h = u - trial_h.projector() @ u
        outside_v = u - trial_v.projector() @ u

        middle = self.apply_Qh(setup, reference.a_ref @ (u - q_u))
        scale_v = densekit.frame_norm(u, reference.gram_v.factor)
        eps_h = self._generalized_ratio(middle, outside_h, reference.gram_h)
        eps_ring = self._generalized_ratio(p_u - q_u, outside_h, reference.gram_h)
        tail = reference.inverse() @ (u - p_u)
        eps_v = self._generalized_ratio(self.apply_Ph(setup, tail), outside_v, reference.gram_v, scale_v)
        return eps_h, eps_ring, eps_v

    def gamma_V(self, setup: GalerkinSetup) -> float:
        """γ(h) = ‖(I − Π₂ₕ^V) T* Π₂ₕ^V‖_V with T* the V-adjoint of T = A_ref⁻¹."""
        reference = setup.reference
        gram_v = reference.gram_v
        test_v = self.subspaces.orthonormalize(setup.test, gram_v).frame
        t_adjoint = densekit.solve_linear(gram_v.matrix, reference.inverse().conj().T @ gram_v.matrix)
        image = t_adjoint @ test_v
        residual = image - test_v @ gram_v.inner(test_v, image)
        return densekit.frame_norm(residual, gram_v.factor)

    def adjoint_gap(self, setup: GalerkinSetup) -> float:
        """‖(I − Q_h*)A_ref*Q_h*‖_H."""
        reference = setup.reference
        gram = reference.gram_h
        q_adjoint = self.build_Qh_adjoint(setup)
        a_adjoint = densekit.solve_linear(gram.matrix, reference.a_ref.conj().T @ gram.matrix)
        operator = (np.eye(reference.n) - q_adjoint) @ a_adjoint @ q_adjoint
        return densekit.weighted_norm(operator, gram.factor)

    def self_adjoint_check(self, setup: GalerkinSetup, target: TargetEigenpair) -> Tuple[bool, float, float]:
        """
        (T self-adjoint in V, ε_V, γ(h)).

        In the self-adjoint case ε_V is controlled by γ(h); the pair is reported
        so the harness can fit the ratio.
        """
        reference = setup.reference
        t = reference.inverse()
        lhs = reference.gram_v.matrix @ t
        selfadjoint = bool(np.allclose(lhs, lhs.conj().T, rtol=1e-10, atol=1e-14 * densekit.norm2(lhs)))
        _, _, eps_v = self.superconvergence_functionals(setup, target)
        return selfadjoint, eps_v, self.gamma_V(setup)

    def cluster_and_diagnose(
        self,
        setup: GalerkinSetup,
        target: TargetEigenpair,
        taus: Sequence[complex] = (),
        a_bound: Optional[float] = None,
        full_norms: bool = True,
    ) -> StudyRecord:
        """
        Diagnose one approximation level against the target.

        The discrete cluster is the set of pencil eigenvalues inside the target
        contour; u_h = E_h u pairs exact and discrete invariant subspaces, with
        E_h the Dunford projector of Q_hAQ_h over the same contour.

        Raises:
            ClusterMismatchError: If the contour holds a number of discrete eigenvalues other than m
        """
        reference = setup.reference
        gram_h, gram_v = reference.gram_h, reference.gram_v
        pairs = self.solve_pencil(setup)
        inside = target.contour.encloses(pairs.values)
        cluster_size = int(np.sum(inside))
        if cluster_size != target.m:
            raise ClusterMismatchError(
                "Discrete cluster size differs from the multiplicity",
                found=cluster_size,
                expected=target.m,
                N=setup.N,
            )

        flags: List[str] = []
        beta, beta_ring = self.infsup_constants(setup)

        # E_h = Φ E_K C with K = B_h⁻¹A_h, C = B_h⁻¹Ψ*G_H; E_h^V = Φ E_K D with D = A_h⁻¹Ψ*G_H A
        reduced = self._solve_block(setup.b_h, setup.a_h, "B_h")
        e_reduced = self.spectral.dunford_projector(reduced, target.contour, Gram.identity(setup.N))
        u = target.U.frame
        q_u = self.apply_Qh(setup, u)
        p_u = self.apply_Ph(setup, u)
        c_u = self._solve_block(setup.b_h, self._test_functional(setup) @ u, "B_h")
        e_u = setup.trial @ (e_reduced @ c_u)

        discrete = self.subspaces.span(setup.trial @ e_reduced, gram_h)
        trial_h = self.subspaces.orthonormalize(setup.trial, gram_h)
        test_h = self.subspaces.orthonormalize(setup.test, gram_h)

        record = StudyRecord(h=setup.h if setup.h is not None else float("nan"), N=setup.N)
        record.beta, record.betaRing = beta, beta_ring
        record.clusterSize = cluster_size
        record.gapUS_H = self.subspaces.containment_gap(target.U, trial_h)
        record.gapUUh_H = self.subspaces.containment_gap(target.U, discrete)
        record.projDefect_H = densekit.frame_norm(e_u - q_u, gram_h.factor)
        record.eigErr = float(np.max(np.abs(pairs.values[inside] - target.value)))
        record.middleH = densekit.frame_norm(
            self.apply_Qh(setup, reference.a_ref @ (u - q_u)), gram_h.factor
        )
        record.leftGap = self.subspaces.containment_gap(target.Ustar, test_h)

        try:
            record.epsH, record.epsRingH, record.epsV = self.superconvergence_functionals(setup, target)
        except ExactCaptureError:
            flags.append("exact_capture")

        # V-norm analogues
        u_v = self.subspaces.orthonormalize(u, gram_v)
        trial_v = self.subspaces.orthonormalize(setup.trial, gram_v)
        discrete_v = self.subspaces.orthonormalize(discrete.frame, gram_v)
        record.gapUS_V = self.subspaces.containment_gap(u_v, trial_v)
        record.gapUUh_V = self.subspaces.containment_gap(u_v, discrete_v)
        d_u = self._solve_block(setup.a_h, self._test_functional(setup) @ (reference.a_ref @ u_v.frame), "A_h")
        e_v_u = setup.trial @ (e_reduced @ d_u)
        record.projDefect_V = densekit.frame_norm(e_v_u - self.apply_Ph(setup, u_v.frame), gram_v.factor)
        record.gammaV = self.gamma_V(setup)

        if full_norms:
            p_h = self.build_Ph(setup)
            record.projNormV, record.projComplementNormV = self.subspaces.projector_norms(p_h, gram_v)
            if a_bound is not None and beta > 0:
                record.projBound = a_bound / beta
                if record.projNormV > record.projBound * (1 + 1e-9):
                    flags.append("projector_bound_violation")
            if abs(record.projNormV - record.projComplementNormV) > 1e-9 * record.projNormV:
                flags.append("projector_norm_mismatch")
            record.adjointGap = self.adjoint_gap(setup)

        if self.subspaces.containment_gap(trial_h, test_h) < 1e-12 and record.gapUS_H > record.gapUUh_H + 1e-12:
            flags.append("gap_order_violation")

        for tau in taus:
            try:
                if self.shift_gap(setup, target, discrete, tau) >= 1e-9:
                    flags.append(f"shift_variance:{tau}")
            except LabError as exc:
                flags.append(f"shift_failed:{exc.code}")

        record.flags = flags
        logger.info(
            f"N={setup.N}: gapUS={record.gapUS_H:.3e} gapUUh={record.gapUUh_H:.3e} "
            f"projDefect={record.projDefect_H:.3e} eigErr={record.eigErr:.3e}"
        )
        return record

    def shift_gap(self, setup: GalerkinSetup, target: TargetEigenpair, discrete: Subspace, tau: complex) -> float:
        """Containment gap between the shifted-pencil cluster subspace and 𝒰ₕ."""
        shifted = self.shifted_pencil(setup, tau)
        recovered = self.unshift(shifted.values, tau)
        inside = target.contour.encloses(recovered)
        span = self.subspaces.span(shifted.vectors[:, inside], setup.reference.gram_h)
        if span.dim != discrete.dim:
            return 1.0
        return self.subspaces.containment_gap(span, discrete)

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _test_functional(setup: GalerkinSetup) -> np.ndarray:
        return setup.test.conj().T @ setup.reference.gram_h.matrix

    @staticmethod
    def _solve_block(block: np.ndarray, rhs: np.ndarray, name: str) -> np.ndarray:
        try:
            return densekit.solve_linear(block, rhs)
        except SingularMatrixError as exc:
            raise InfSupError(f"{name} is singular", **exc.context) from exc

    def _generalized_ratio(
        self,
        numerator: np.ndarray,
        denominator: np.ndarray,
        gram: Gram,
        scale: float = 1.0,
    ) -> float:
        """sup_c ‖N c‖_G / ‖D c‖_G via the m×m pencil of the two quadratic forms."""
        den_weighted = gram.factor @ denominator
        num_weighted = gram.factor @ numerator
        den_values = densekit.singular_values(den_weighted)
        if den_values.size == 0 or den_values[0] <= self.capture_tol * max(scale, 1.0):
            raise ExactCaptureError("Target subspace lies in the trial space", largest=float(den_values[0]) if den_values.size else 0.0)

        den_form = den_weighted.conj().T @ den_weighted
        num_form = num_weighted.conj().T @ num_weighted
        weights, directions = sla.eigh(den_form)
        keep = weights > self.deflation_tol * weights[-1]
        scaled = directions[:, keep] / np.sqrt(weights[keep])
        reduced = scaled.conj().T @ num_form @ scaled
        largest = float(sla.eigvalsh(0.5 * (reduced + reduced.conj().T))[-1])
        return float(np.sqrt(max(largest, 0.0)))
