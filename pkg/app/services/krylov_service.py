"""
Krylov service.
Arnoldi and two-sided (biorthogonal) Lanczos recursions with per-step
eigenvector diagnostics for a tracked simple eigenpair.
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla

from app.config import Settings, get_settings
from app.models.operators import Breakdown, Contour, Gram, KrylovRun, Subspace
from app.models.schemas import StepDiagnostics
from app.services.subspace_service import SubspaceService
from app.utils import densekit
from app.utils.errors import KrylovError
from app.utils.validators import as_matrix, as_vector, require_square

logger = logging.getLogger(__name__)


class KrylovService:
    """Service for Krylov recursions and their superconvergence diagnostics."""

    def __init__(self, settings: Optional[Settings] = None, subspace_service: Optional[SubspaceService] = None):
        """Initialize with breakdown thresholds."""
        self.settings = settings or get_settings()
        self.subspaces = subspace_service or SubspaceService(self.settings)
        self.happy_tol = self.settings.HAPPY_TOL
        self.breakdown_tol = self.settings.BREAKDOWN_TOL
        self.identity_tol = 1e-9

    def arnoldi(self, operator, start, max_steps: int) -> KrylovRun:
        """
        Arnoldi with modified Gram-Schmidt and one reorthogonalization pass.

        β_{ℓ+1} ≤ 1e-13·‖A‖ ends the run as happy termination.

        Raises:
            KrylovError: If the start vector is zero or max_steps exceeds n
        """
        a, v1, n = self._prepare(operator, start, max_steps)
        scale = densekit.norm2(a)

        basis = np.zeros((n, max_steps + 1), dtype=np.complex128)
        hessenberg = np.zeros((max_steps + 1, max_steps), dtype=np.complex128)
        basis[:, 0] = v1 / np.linalg.norm(v1)
        betas: List[float] = []
        breakdown = None
        length = max_steps

        for j in range(max_steps):
            w = a @ basis[:, j]
            for _ in range(2):
                for i in range(j + 1):
                    coefficient = np.vdot(basis[:, i], w)
                    w -= coefficient * basis[:, i]
                    hessenberg[i, j] += coefficient
            beta = float(np.linalg.norm(w))
            betas.append(beta)
            hessenberg[j + 1, j] = beta
            if beta <= self.happy_tol * max(scale, 1e-300):
                length = j + 1
                breakdown = Breakdown(step=length, kind="happy", reason="Krylov space is invariant")
                logger.debug(f"Arnoldi happy termination at ℓ={length}")
                break
            basis[:, j + 1] = w / beta

        columns = length if breakdown else length + 1
        return KrylovRun(
            method="arnoldi",
            A=a,
            V=basis[:, :columns],
            projected=hessenberg[:columns, :length],
            alphas=[complex(hessenberg[i, i]) for i in range(length)],
            betas=betas,
            length=length,
            breakdown=breakdown,
        )

    def bilanczos(self, operator, start_right, start_left, max_steps: int) -> KrylovRun:
        """
        Two-sided Lanczos: A V = V J + β v e*, A*W = W J* + γ̄ w e*, W*V = I.

        β_i is real positive and γ_i = ω_i/β_i with ω_i = s*r, so |γ_i| = |β_i|.
        A serious breakdown (|s*r| ≤ 1e-12·‖r‖‖s‖ with nonzero residuals) halts
        the run with a breakdown record; look-ahead is not attempted.

        Raises:
            KrylovError: If w1*v1 = 0
        """
        a, v1, n = self._prepare(operator, start_right, max_steps)
        w1 = as_vector(start_left, "w1")
        coupling = np.vdot(w1, v1)
        if abs(coupling) <= self.breakdown_tol * np.linalg.norm(w1) * np.linalg.norm(v1):
            raise KrylovError("Start vectors are biorthogonal (w1*v1 = 0)")
        scale = densekit.norm2(a)

        right = np.zeros((n, max_steps + 1), dtype=np.complex128)
        left = np.zeros((n, max_steps + 1), dtype=np.complex128)
        tridiagonal = np.zeros((max_steps + 1, max_steps), dtype=np.complex128)
        right[:, 0] = v1 / np.linalg.norm(v1)
        left[:, 0] = w1 / np.conj(np.vdot(w1, right[:, 0]))

        alphas: List[complex] = []
        betas: List[float] = []
        gammas: List[complex] = []
        breakdown = None
        length = max_steps
        left_residual = None

        for j in range(max_steps):
            v, w = right[:, j], left[:, j]
            alpha = np.vdot(w, a @ v)
            alphas.append(complex(alpha))
            tridiagonal[j, j] = alpha

            r = a @ v - alpha * v
            s = a.conj().T @ w - np.conj(alpha) * w
            if j > 0:
                r -= gammas[j - 1] * right[:, j - 1]
                s -= betas[j - 1] * left[:, j - 1]
            # one rebiorthogonalization pass against the existing pairs
            r -= right[:, :j + 1] @ (left[:, :j + 1].conj().T @ r)
            s -= left[:, :j + 1] @ (right[:, :j + 1].conj().T @ s)

            r_norm, s_norm = float(np.linalg.norm(r)), float(np.linalg.norm(s))
            if min(r_norm, s_norm) <= self.happy_tol * max(scale, 1e-300):
                betas.append(r_norm)
                gammas.append(complex(s_norm))
                length = j + 1
                left_residual = s
                breakdown = Breakdown(step=length, kind="happy", reason="Krylov space is invariant")
                logger.debug(f"Lanczos happy termination at ℓ={length}")
                break

            omega = np.vdot(s, r)
            if abs(omega) <= self.breakdown_tol * r_norm * s_norm:
                length = j + 1
                left_residual = s
                breakdown = Breakdown(
                    step=j + 2,
                    kind="serious",
                    reason=f"|w*v| = {abs(omega):.2e} with residual norms {r_norm:.2e}, {s_norm:.2e}",
                )
                logger.warning(f"Lanczos serious breakdown at step {j + 2}")
                break

            beta = math.sqrt(abs(omega))
            gamma = omega / beta
            betas.append(beta)
            gammas.append(complex(gamma))
            tridiagonal[j + 1, j] = beta
            if j + 1 < max_steps:
                tridiagonal[j, j + 1] = gamma
            right[:, j + 1] = r / beta
            left[:, j + 1] = s / np.conj(gamma)

        columns = length + 1 if (breakdown is None) else length
        return KrylovRun(
            method="bilanczos",
            A=a,
            V=right[:, :columns],
            W=left[:, :columns],
            projected=tridiagonal[:columns, :length],
            alphas=alphas,
            betas=betas,
            gammas=gammas,
            length=length,
            breakdown=breakdown,
            left_residual=left_residual,
        )

    def ritz_pairs(self, run: KrylovRun, ell: int) -> List[Tuple[complex, np.ndarray]]:
        """
        Eigenpairs of H_ℓ or J_ℓ lifted through V_ℓ, u = V_ℓz with unit norm.

        Raises:
            KrylovError: If ℓ exceeds the completed length
        """
        self._check_step(run, ell)
        decomposition = densekit.eig_dense(run.square(ell))
        lifted = run.V[:, :ell] @ decomposition.right_vectors
        lifted = lifted / np.linalg.norm(lifted, axis=0)
        return [(complex(value), lifted[:, i]) for i, value in enumerate(decomposition.values)]

    def oblique_projector(self, run: KrylovRun, ell: int) -> np.ndarray:
        """Q_ℓ = V_ℓW_ℓ* (bilanczos) or V_ℓV_ℓ* (arnoldi)."""
        self._check_step(run, ell)
        v = run.V[:, :ell]
        w = v if run.method == "arnoldi" else run.W[:, :ell]
        return v @ w.conj().T

    def krylov_gap(self, run: KrylovRun, ell: int, target_vector) -> float:
        """δ(𝒰, K_ℓ) in the Euclidean inner product."""
        self._check_step(run, ell)
        gram = Gram.identity(run.A.shape[0])
        u = self.subspaces.orthonormalize(as_vector(target_vector, "u"), gram)
        krylov = self.subspaces.orthonormalize(run.V[:, :ell], gram)
        return self.subspaces.containment_gap(u, krylov)

    def step_diagnostics(
        self,
        run: KrylovRun,
        ell: int,
        eigenvalue: complex,
        eigenvector,
        contour: Optional[Contour] = None,
        run_index: int = 0,
    ) -> StepDiagnostics:
        """
        Diagnostics of step ℓ for the exact simple eigenpair (λ, u).

        The tracked Ritz pair is the one nearest λ; u^(ℓ) is rotated so that
        u^(ℓ)*Q_ℓu is real positive and scaled to ‖Q_ℓu‖. The closed-form middle
        quantity is checked against the matrix form ‖Q_ℓA(I − Q_ℓ)u‖.

        Raises:
            KrylovError: If (λ, u) is not an eigenpair or ℓ is out of range
        """
        self._check_step(run, ell)
        a = run.A
        u = as_vector(eigenvector, "u")
        u = u / np.linalg.norm(u)
        if np.linalg.norm(a @ u - eigenvalue * u) > 1e-10 * max(1.0, densekit.norm2(a)):
            raise KrylovError("Target is not an eigenpair of A", eigenvalue=complex(eigenvalue))

        diagnostics = StepDiagnostics(run=run_index, method=run.method, ell=ell)
        q = self.oblique_projector(run, ell)
        q_u = q @ u

        pairs = self.ritz_pairs(run, ell)
        diagnostics.ritz_values = [(value.real, value.imag) for value, _ in pairs]
        ritz_value, ritz_vector = min(pairs, key=lambda pair: abs(pair[0] - eigenvalue))
        diagnostics.eig_error = abs(ritz_value - eigenvalue)
        if contour is not None and not contour.encloses(ritz_value):
            diagnostics.unconverged = True
            diagnostics.flags.append("unconverged")

        alignment = np.vdot(ritz_vector, q_u)
        if abs(alignment) > 0.0:
            ritz_vector = ritz_vector * (alignment / abs(alignment))
        diagnostics.projected_norm = float(np.linalg.norm(q_u))
        ritz_vector = ritz_vector * (diagnostics.projected_norm / np.linalg.norm(ritz_vector))
        diagnostics.ritz_defect = float(np.linalg.norm(ritz_vector - q_u))
        diagnostics.gap = self.krylov_gap(run, ell, u)

        diagnostics.identity_lhs = float(np.linalg.norm(q @ (a @ (u - q_u))))
        complement_norm = 0.0
        if run.method == "bilanczos":
            if run.V.shape[1] > ell:
                coupling = abs(np.vdot(run.W[:, ell], u))
                diagnostics.identity_rhs = abs(run.gamma(ell + 1)) * float(np.linalg.norm(run.V[:, ell - 1])) * coupling
                complement_norm = coupling
            else:
                # stopped before w_{ℓ+1}: Q_ℓA(I − Q_ℓ)u = v_ℓ(s*u)
                residual = run.left_residual if run.left_residual is not None else np.zeros_like(u)
                overlap = abs(np.vdot(residual, u))
                diagnostics.identity_rhs = float(np.linalg.norm(run.V[:, ell - 1])) * overlap
                residual_norm = float(np.linalg.norm(residual))
                complement_norm = overlap / residual_norm if residual_norm > 0.0 else 0.0
        else:
            complement = sla.null_space(run.V[:, :ell].conj().T)
            projected = complement.conj().T @ u
            coupling_block = run.V[:, :ell].conj().T @ a @ complement
            diagnostics.identity_rhs = float(np.linalg.norm(coupling_block @ projected))
            complement_norm = float(np.linalg.norm(projected))
        diagnostics.middle = diagnostics.identity_rhs

        scale = densekit.norm2(a) * densekit.norm2(run.V[:, :ell])
        if run.method == "bilanczos":
            scale *= densekit.norm2(run.W[:, :ell])
        if abs(diagnostics.identity_lhs - diagnostics.identity_rhs) > self.identity_tol * max(1.0, scale):
            diagnostics.flags.append("identity_mismatch")

        product = float(np.prod([run.beta(i) for i in range(2, ell + 1)])) if ell > 1 else 1.0
        diagnostics.beta_product = product
        if product > 0.0:
            diagnostics.eps_estimate = complement_norm / product

        diagnostics.lemma_lhs, diagnostics.lemma_rhs = self.lemma_quantities(run, ell, diagnostics.gap)
        if math.isnan(diagnostics.lemma_rhs):
            diagnostics.flags.append("lemma_unchecked")
        elif diagnostics.lemma_lhs > diagnostics.lemma_rhs * (1 + 1e-9) + 1e-12:
            diagnostics.flags.append("lemma_violation")
        return diagnostics

    def lemma_quantities(self, run: KrylovRun, ell: int, gap: float) -> Tuple[float, float]:
        """
        (|β₂⋯β_{ℓ+1}|, ‖W‖(1+√2)·δ(𝒰, K_ℓ)).

        ‖W‖ needs the full biorthogonal system, so the right side is NaN for
        Lanczos runs that stopped before reaching n vectors.
        """
        if len(run.betas) < ell:
            return math.nan, math.nan
        lhs = float(np.prod([run.beta(i) for i in range(2, ell + 2)]))
        n = run.A.shape[0]
        if run.method == "arnoldi":
            w_norm = 1.0
        elif run.W is not None and run.W.shape[1] >= n:
            w_norm = densekit.norm2(run.W[:, :n])
        else:
            return lhs, math.nan
        return lhs, w_norm * (1.0 + math.sqrt(2.0)) * gap

    def recurrence_residual(self, run: KrylovRun) -> Tuple[float, float]:
        """‖AV_ℓ − V_{ℓ+1}Ĵ_ℓ‖ and, for bilanczos, the left counterpart with γ̄ on the subdiagonal."""
        ell = run.length
        k = run.V.shape[1]
        right = densekit.norm2(run.A @ run.V[:, :ell] - run.V[:, :k] @ run.projected[:k, :ell])
        if run.method == "arnoldi":
            return right, 0.0
        left_projected = run.square(ell).conj().T.copy()
        if k > ell:
            extended = np.zeros((k, ell), dtype=np.complex128)
            extended[:ell, :] = left_projected
            extended[ell, ell - 1] = np.conj(run.gamma(ell + 1))
            left_projected = extended
        left = densekit.norm2(run.A.conj().T @ run.W[:, :ell] - run.W[:, :k] @ left_projected)
        return right, left

    def _prepare(self, operator, start, max_steps: int) -> Tuple[np.ndarray, np.ndarray, int]:
        a = as_matrix(operator, "A")
        require_square(a, "A")
        n = a.shape[0]
        v1 = as_vector(start, "v1")
        if v1.size != n:
            raise KrylovError("Start vector length must match A", n=n, length=v1.size)
        if np.linalg.norm(v1) == 0.0:
            raise KrylovError("Start vector is zero")
        if not 1 <= max_steps <= n:
            raise KrylovError("max_steps must lie in [1, n]", max_steps=max_steps, n=n)
        return a, v1, n

    @staticmethod
    def _check_step(run: KrylovRun, ell: int) -> None:
        if not 1 <= ell <= run.length:
            detail = "Step lies beyond a breakdown" if run.breakdown else "Step exceeds the run length"
            raise KrylovError(detail, ell=ell, length=run.length)
