"""Inf-sup diagnostics, quasi-optimality measurements, and the enrichment loop.

Continuous-level quantities (the exact solution, its best approximation, the
true dual norm of the temporal derivative) are approximated on a reference
pair two uniform refinements finer in both axes; inequality checks that rely
on the surrogate carry a 1.05 slack factor in the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from psaddle import monotone as mo
from psaddle import system as sy
from psaddle.core_linalg import extremal_generalized_eigen, spd_factorize
from psaddle.errors import InvalidSpaceError, PsaddleError
from psaddle.riesz import RieszContext
from psaddle.spaces import (
    CONT_P1,
    CONT_P1_DIRICHLET,
    DISC_P1,
    BasisSpec,
    Mesh1D,
    TensorSpacePair,
    assemble_1d,
    assemble_matrices,
    embed_X_into_Y,
    embedding_matrix,
    refine_times,
    trace_at_time,
)

__all__ = [
    "InfSupReport",
    "PjotrReport",
    "TwoLevel",
    "gamma_t",
    "gamma_x",
    "gamma_direct",
    "infsup_report",
    "quasi_opt_ratio",
    "check_trial_norm_quasi_opt",
    "check_pjotr",
    "enrich_until_pjotr",
    "efficiency_reliability",
]


@dataclass(frozen=True)
class InfSupReport:
    gamma_t: float
    gamma_x: float
    gamma_direct: float | None = None

    @property
    def gamma_lower(self) -> float:
        return self.gamma_t * self.gamma_x


@dataclass(frozen=True)
class PjotrReport:
    rho: float
    lhs: float            # enriched-space defect of the auxiliary variable
    rhs: float            # rho * computable discrete quantities
    satisfied: bool
    level: int | None = None


def gamma_t(
    X_t: tuple[Mesh1D, BasisSpec], Y_t: tuple[Mesh1D, BasisSpec]
) -> float:
    """Temporal inf-sup factor: worst ratio of the discrete dual norm of the
    derivative over its true L2 norm, time-constants deflated.

    Equals 1 exactly when the derivative image of the trial space lies in
    the test space (true for the default pairing).
    """
    M_Y = assemble_1d("mass", Y_t)
    B = assemble_1d("dtrial", Y_t, X_t)
    A_t = assemble_1d("stiffness", X_t)
    fact = spd_factorize(M_Y)
    Binv = np.column_stack([fact.solve(np.asarray(B[:, [j]].todense()).ravel())
                            for j in range(B.shape[1])])
    num = B.T.toarray() @ Binv  # B^T M_Y^{-1} B
    kernel = np.ones((A_t.shape[0], 1))
    lam, _ = extremal_generalized_eigen(
        sp.csr_matrix(num), A_t, "smallest", constraint_kernel=kernel
    )
    return math.sqrt(max(lam, 0.0))


def gamma_x(X_x: tuple[Mesh1D, BasisSpec], levels_finer: int = 2) -> float:
    """Spatial inf-sup factor 1/||P||_V with P the H-orthogonal projector.

    The projector norm is measured against a reference space `levels_finer`
    uniform refinements finer, via the generalized eigenproblem for its
    V-norm.
    """
    mesh, spec = X_x
    fine_mesh = refine_times(mesh, levels_finer)
    E = embedding_matrix(X_x, (fine_mesh, spec))
    M_f = assemble_1d("mass", (fine_mesh, spec))
    A_f = assemble_1d("stiffness", (fine_mesh, spec))
    G = E.T @ (M_f @ E)  # coarse mass in fine coordinates
    P = E @ np.linalg.solve(G, E.T @ M_f.toarray())
    lam, _ = extremal_generalized_eigen(
        sp.csr_matrix(P.T @ (A_f @ P)), A_f, "largest"
    )
    return 1.0 / math.sqrt(lam)


class TwoLevel:
    """Cross-pair machinery between a coarse pair and a finer reference pair.

    Holds the tensor prolongations, the cross derivative/mass matrices in
    both directions, and the Kronecker factors of the fine trial Gram, so
    best approximations and mixed-level dual norms are assembled from small
    dense factors instead of large sparse solves.
    """

    def __init__(self, coarse: TensorSpacePair, fine: TensorSpacePair,
                 ctx_coarse: RieszContext | None = None,
                 ctx_fine: RieszContext | None = None):
        self.coarse = coarse
        self.fine = fine
        self.ctx_coarse = ctx_coarse or RieszContext(coarse)
        self.ctx_fine = ctx_fine or RieszContext(fine)

    @cached_property
    def E_t_X(self) -> np.ndarray:
        return embedding_matrix(
            (self.coarse.mesh_t_X, self.coarse.spec_t_X),
            (self.fine.mesh_t_X, self.fine.spec_t_X),
        )

    @cached_property
    def E_t_Y(self) -> np.ndarray:
        return embedding_matrix(
            (self.coarse.mesh_t_Y, self.coarse.spec_t_Y),
            (self.fine.mesh_t_Y, self.fine.spec_t_Y),
        )

    @cached_property
    def E_x(self) -> np.ndarray:
        return embedding_matrix(
            (self.coarse.mesh_x, self.coarse.spec_x),
            (self.fine.mesh_x, self.fine.spec_x),
        )

    def prolong_X(self, u: np.ndarray) -> np.ndarray:
        U = np.asarray(u).reshape(self.coarse.dim_t_X, self.coarse.dim_x)
        return (self.E_t_X @ U @ self.E_x.T).reshape(-1)

    def prolong_Y(self, lam: np.ndarray) -> np.ndarray:
        L = np.asarray(lam).reshape(self.coarse.dim_t_Y, self.coarse.dim_x)
        return (self.E_t_Y @ L @ self.E_x.T).reshape(-1)

    # -- cross matrices ------------------------------------------------------

    @cached_property
    def B_coarseY_fineX(self) -> np.ndarray:
        """int (fine trial)' (coarse test) dt."""
        return assemble_1d(
            "dtrial",
            (self.coarse.mesh_t_Y, self.coarse.spec_t_Y),
            (self.fine.mesh_t_X, self.fine.spec_t_X),
        ).toarray()

    @cached_property
    def M_coarseX_fineX(self) -> np.ndarray:
        return assemble_1d(
            "mass",
            (self.coarse.mesh_x, self.coarse.spec_x),
            (self.fine.mesh_x, self.fine.spec_x),
        ).toarray()

    @cached_property
    def B_fineY_coarseX(self) -> np.ndarray:
        """int (coarse trial)' (fine test) dt."""
        return assemble_1d(
            "dtrial",
            (self.fine.mesh_t_Y, self.fine.spec_t_Y),
            (self.coarse.mesh_t_X, self.coarse.spec_t_X),
        ).toarray()

    @cached_property
    def M_fineX_coarseX(self) -> np.ndarray:
        return assemble_1d(
            "mass",
            (self.fine.mesh_x, self.fine.spec_x),
            (self.coarse.mesh_x, self.coarse.spec_x),
        ).toarray()

    def deriv_moments_on_coarse_Y(self, w_fine: np.ndarray) -> np.ndarray:
        """(E_Y^d)' d_t w for a fine trial function w, as coarse Y moments."""
        W = np.asarray(w_fine).reshape(self.fine.dim_t_X, self.fine.dim_x)
        return (self.B_coarseY_fineX @ W @ self.M_coarseX_fineX.T).reshape(-1)

    def deriv_moments_on_fine_Y(self, u_coarse: np.ndarray) -> np.ndarray:
        """d_t of a coarse trial function tested against the fine test basis."""
        U = np.asarray(u_coarse).reshape(self.coarse.dim_t_X, self.coarse.dim_x)
        return (self.B_fineY_coarseX @ U @ self.M_fineX_coarseX.T).reshape(-1)

    def norm_X_delta_of_fine(self, w_fine: np.ndarray) -> float:
        """Mesh-dependent norm with the COARSE test space, for fine functions."""
        y2 = float(w_fine @ self.ctx_fine.apply_R_YX(w_fine))
        mom = self.deriv_moments_on_coarse_Y(w_fine)
        d2 = float(mom @ self.ctx_coarse.riesz_Y_solve(mom))
        wT = trace_at_time(self.fine, w_fine, self.fine.T)
        h2 = float(wT @ (self.fine.M_x @ wT))
        return math.sqrt(max(y2 + d2 + h2, 0.0))

    # -- fine trial Gram in Kronecker factors ---------------------------------

    @cached_property
    def fine_RX_factors(self):
        p = self.fine
        fact_M = spd_factorize(p.M_t_Y)
        Bd = p.B_t.toarray()
        T_mat = Bd.T @ fact_M.solve(Bd)
        fact_A = self.ctx_fine.fact_A_x
        Md = p.M_x.toarray()
        S_mat = Md @ fact_A.solve(Md)
        eT = np.zeros((p.dim_t_X, p.dim_t_X))
        eT[-1, -1] = 1.0
        return [
            (p.M_t_X.toarray(), p.A_x.toarray()),
            (T_mat, S_mat),
            (eT, Md),
        ]

    @cached_property
    def coarse_gram_in_fine_norm(self) -> np.ndarray:
        """P_X^T R_X^fine P_X assembled from small Kronecker factors."""
        Et, Ex = self.E_t_X, self.E_x
        G = np.zeros((self.coarse.dim_X, self.coarse.dim_X))
        for Ft, Fx in self.fine_RX_factors:
            G += np.kron(Et.T @ Ft @ Et, Ex.T @ Fx @ Ex)
        return G

    def best_approx_X(self, u_fine: np.ndarray) -> tuple[np.ndarray, float]:
        """Best approximation from the coarse trial space in the fine norm."""
        rhs_fine = self.ctx_fine.apply_R_X(u_fine)
        R = rhs_fine.reshape(self.fine.dim_t_X, self.fine.dim_x)
        rhs = (self.E_t_X.T @ R @ self.E_x).reshape(-1)
        coeffs = np.linalg.solve(self.coarse_gram_in_fine_norm, rhs)
        err = self.ctx_fine.norm_X_delta(u_fine - self.prolong_X(coeffs))
        return coeffs, err


def gamma_direct(two: TwoLevel) -> float:
    """Inf-sup ratio of the coarse discrete dual norm of d_t over the fine
    (surrogate-continuous) one, time-constant trial functions deflated."""
    c = two.coarse
    ctxc = two.ctx_coarse
    fact_MYc = ctxc.fact_M_t_Y
    Bc = c.B_t.toarray()
    T_c = Bc.T @ fact_MYc.solve(Bc)
    Mc = c.M_x.toarray()
    S_c = Mc @ ctxc.fact_A_x.solve(Mc)
    num = np.kron(T_c, S_c)

    f = two.fine
    fact_MYf = spd_factorize(f.M_t_Y)
    Bx = two.B_fineY_coarseX           # (dim fine Y_t, dim coarse X_t)
    T_f = Bx.T @ fact_MYf.solve(Bx)
    Mx = two.M_fineX_coarseX           # (dim fine X_x, dim coarse X_x)
    fact_Af = spd_factorize(f.A_x)
    S_f = Mx.T @ fact_Af.solve(Mx)
    den = np.kron(T_f, S_f)

    kernel = np.kron(np.ones((c.dim_t_X, 1)), np.eye(c.dim_x))
    lam, _ = extremal_generalized_eigen(
        sp.csr_matrix(num), sp.csr_matrix(den), "smallest", constraint_kernel=kernel
    )
    return math.sqrt(max(lam, 0.0))


def infsup_report(pair: TensorSpacePair, two: TwoLevel | None = None) -> InfSupReport:
    gt = gamma_t((pair.mesh_t_X, pair.spec_t_X), (pair.mesh_t_Y, pair.spec_t_Y))
    gx = gamma_x((pair.mesh_x, pair.spec_x))
    gd = gamma_direct(two) if two is not None else None
    return InfSupReport(gamma_t=gt, gamma_x=gx, gamma_direct=gd)


def quasi_opt_ratio(
    u_ref: np.ndarray,
    state: sy.SaddleState,
    two: TwoLevel,
    bundle: sy.ConstantsBundle,
    report: InfSupReport,
) -> tuple[float, float]:
    """Measured error over best-approximation error, against the theory bound
    2 (1 + L_Ninv L_N / gamma^2) with gamma the tensor lower bound."""
    _, best_err = two.best_approx_X(u_ref)
    if best_err <= 1e-12:
        raise PsaddleError("reference essentially lies in the trial space; ratio undefined")
    err = two.ctx_fine.norm_X_delta(u_ref - two.prolong_X(state.u))
    gamma = report.gamma_lower
    bound = 2.0 * (1.0 + bundle.L_Ninv * bundle.L_N / gamma**2)
    return err / best_err, bound


@dataclass(frozen=True)
class TrialNormQuasiOpt:
    lhs_Xdelta: float
    lhs_H: float
    bound: float
    aux_lhs: float
    aux_bound: float
    best_err: float


def check_trial_norm_quasi_opt(
    u_ref: np.ndarray,
    state: sy.SaddleState,
    two: TwoLevel,
    bundle: sy.ConstantsBundle,
    data: sy.ProblemData,
) -> TrialNormQuasiOpt:
    """Quasi-optimality in the mesh-dependent norm, plus the induced bound on
    the auxiliary-variable gap, with the fine-space surrogate standing in for
    the continuous solution."""
    if not two.coarse.x_in_y:
        raise InvalidSpaceError("trial space must lie inside the test space")
    _, best_err = two.best_approx_X(u_ref)
    diff_fine = u_ref - two.prolong_X(state.u)
    lhs_X = two.norm_X_delta_of_fine(diff_fine)
    lhs_H = trace_H_distance(data, two.coarse, state.u)
    bound = bundle.C_1 * best_err

    lam_minus_u = state.lam - embed_X_into_Y(two.coarse, state.u)
    factor = math.sqrt(1.0 + bundle.L_A**2) / bundle.m_A
    cor_lhs = two.ctx_coarse.norm_Y(lam_minus_u) + factor * lhs_H
    cor_bound = 2.0 * bundle.C_1 * factor * best_err
    return TrialNormQuasiOpt(
        lhs_Xdelta=lhs_X, lhs_H=lhs_H, bound=bound,
        aux_lhs=cor_lhs, aux_bound=cor_bound, best_err=best_err,
    )


def trace_H_distance(data: sy.ProblemData, pair: TensorSpacePair, u: np.ndarray) -> float:
    """||u0 - u(0, .)||_{L2} with the closed-form initial value."""
    u0_sq = sy.u0_l2_norm2(data, pair)
    b0 = sy.u0_moments(data, pair)
    tr = trace_at_time(pair, u, 0.0)
    val = u0_sq - 2.0 * float(b0 @ tr) + float(tr @ (pair.M_x @ tr))
    return math.sqrt(max(val, 0.0))


def check_pjotr(
    state: sy.SaddleState,
    data: sy.ProblemData,
    two: TwoLevel,
    mu: mo.MuCoefficient,
    bundle: sy.ConstantsBundle,
    rho: float = 1.0,
    solve_tol: float = 1e-10,
) -> PjotrReport:
    """A posteriori quasi-optimality condition for the data at hand.

    Solves the auxiliary problem A lambda = ell - d_t u on the enriched test
    space (Newton to solve_tol in the dual norm), compares the defect of the
    coarse auxiliary variable against the computable right-hand side.
    """
    coarse, fine = two.coarse, two.fine
    if not coarse.x_in_y:
        raise InvalidSpaceError("condition requires the trial space inside the test space")

    if data.has_ell:
        ell_fine = sy.assemble_functional(
            fine.mesh_t_Y, fine.spec_t_Y, fine.mesh_x, fine.spec_x,
            data.ell_f0, data.ell_f1,
        )
    else:
        ell_fine = np.zeros(fine.dim_Y)
    target = ell_fine - two.deriv_moments_on_fine_Y(state.u)

    op_fine = mo.GalerkinOperator(fine, "Y", mu)
    start = two.prolong_Y(state.lam)
    res = mo.newton_solve(
        op_fine.apply, op_fine.jacobian, target, start,
        residual_norm=two.ctx_fine.dual_norm_Y, tol=solve_tol,
    )
    lam_hat = res.x

    lhs = two.ctx_fine.norm_Y(lam_hat - two.prolong_Y(state.lam))
    lam_minus_u = state.lam - embed_X_into_Y(coarse, state.u)
    factor = math.sqrt(1.0 + bundle.L_A**2) / bundle.m_A
    rhs = rho * (
        two.ctx_coarse.norm_Y(lam_minus_u)
        + factor * trace_H_distance(data, coarse, state.u)
    )
    return PjotrReport(rho=rho, lhs=lhs, rhs=rhs, satisfied=bool(lhs <= rhs))


def _pair_with_enriched_test(base: TensorSpacePair, level: int) -> TensorSpacePair:
    """Same trial axes; test space refined `level` times in time."""
    mesh_Y = refine_times(base.mesh_t_Y, level)
    return assemble_matrices(
        (base.mesh_t_X, base.spec_t_X), (mesh_Y, base.spec_t_Y),
        (base.mesh_x, base.spec_x),
    )


def _surrogate_pair(pair: TensorSpacePair, extra: int = 2) -> TensorSpacePair:
    """Reference pair `extra` uniform refinements finer in both axes."""
    return assemble_matrices(
        (refine_times(pair.mesh_t_X, extra), CONT_P1),
        (refine_times(pair.mesh_t_Y, extra), DISC_P1),
        (refine_times(pair.mesh_x, extra), CONT_P1_DIRICHLET),
    )


def enrich_until_pjotr(
    base_pair: TensorSpacePair,
    data: sy.ProblemData,
    mu: mo.MuCoefficient,
    bundle: sy.ConstantsBundle,
    rho: float = 1.0,
    max_levels: int = 6,
    surrogate_extra: int = 2,
    solve_tol: float = 1e-12,
) -> tuple[int, PjotrReport]:
    """Enlarge the test space (uniform temporal refinements) until the
    condition holds, re-solving the saddle system per level since the
    Galerkin solution depends on the test space."""
    for level in range(max_levels + 1):
        pair = _pair_with_enriched_test(base_pair, level)
        ctx = RieszContext(pair)
        op_Y = mo.GalerkinOperator(pair, "Y", mu)
        op_X = mo.GalerkinOperator(pair, "X", mu)
        rhs = sy.assemble_rhs(data, pair)
        state = sy.solve_reference(rhs, pair, op_Y, op_X, ctx, tol=solve_tol)
        surrogate = _surrogate_pair(pair, surrogate_extra)
        two = TwoLevel(pair, surrogate, ctx_coarse=ctx)
        report = check_pjotr(state, data, two, mu, bundle, rho=rho)
        report = PjotrReport(
            rho=report.rho, lhs=report.lhs, rhs=report.rhs,
            satisfied=report.satisfied, level=level,
        )
        if report.satisfied:
            return level, report
    return max_levels, report


def efficiency_reliability(
    u_ref: np.ndarray,
    state: sy.SaddleState,
    two: TwoLevel,
    bundle: sy.ConstantsBundle,
    data: sy.ProblemData,
    rho: float = 1.0,
) -> tuple[float, float, float]:
    """True-error-to-estimator ratio against its two-sided theory bounds.

    estimator^2 = ||lambda - u||_{Y^d}^2 + ||u0 - u(0)||_H^2; valid once the
    a posteriori condition holds with the given rho.
    """
    lam_minus_u = state.lam - embed_X_into_Y(two.coarse, state.u)
    est = math.sqrt(
        two.ctx_coarse.norm_Y(lam_minus_u) ** 2
        + trace_H_distance(data, two.coarse, state.u) ** 2
    )
    if est <= 1e-14:
        raise PsaddleError("estimator vanished; ratio undefined")
    err = two.ctx_fine.norm_X_delta(u_ref - two.prolong_X(state.u))
    L_A, m_A = bundle.L_A, bundle.m_A
    lower = m_A / math.sqrt(1.0 + L_A**2 + m_A**2)
    upper = bundle.L_Beinv * math.sqrt(
        L_A**2 * rho**2 + (L_A * rho * math.sqrt(1.0 + L_A**2) / m_A + 1.0) ** 2
    )
    return err / est, lower, upper
