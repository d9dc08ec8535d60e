"""Saddle-point operator, right-hand sides, Schur reduction, constant calculus.

The discrete system couples a test-space variable lambda with the trial
variable u:

    [ A_Y           D        ] [lambda]   [ f ]
    [ D^T   -(A_X + trace'T) ] [  u   ] = [ g ],

with D the temporal-derivative coupling.  Eliminating lambda yields the
Schur operator S z = A_X z + trace term + g - D^T A_Y^{-1}(f - D z), which
is Lipschitz continuous and strongly monotone; the whole constant calculus
downstream of (L_A, m_A) lives in `derive_constants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from psaddle import monotone as mo
from psaddle.core_linalg import lu_factorize
from psaddle.errors import NotConvergedError
from psaddle.riesz import RieszContext
from psaddle.spaces import (
    Mesh1D,
    BasisSpec,
    TensorSpacePair,
    element_dofs,
    gauss_rule,
    reference_values,
)

__all__ = [
    "ProblemData",
    "SaddleState",
    "ConstantsBundle",
    "ManufacturedProblem",
    "derive_constants",
    "assemble_functional",
    "assemble_rhs",
    "apply_N",
    "residual",
    "SchurOperator",
    "solve_reference",
    "heat_problem",
    "quasilinear_problem",
    "interpolate_onto",
]

C_PF_UNIT_INTERVAL = 1.0 / math.pi  # Poincare-Friedrichs constant of (0, 1)


@dataclass(frozen=True)
class SaddleState:
    """Coefficient pair (lambda, u) on Y^delta x X^delta."""

    lam: np.ndarray
    u: np.ndarray

    def __sub__(self, other: "SaddleState") -> "SaddleState":
        return SaddleState(self.lam - other.lam, self.u - other.u)


@dataclass(frozen=True)
class ConstantsBundle:
    """Every constant the error theory derives from (L_A, m_A)."""

    L_A: float
    m_A: float
    L_N: float
    L_S: float
    m_S: float
    L_Ninv: float
    L_Beinv: float
    C_1: float
    C_PF: float = C_PF_UNIT_INTERVAL
    C_J: float | None = None

    @property
    def A_constants(self) -> mo.MonotoneConstants:
        return mo.MonotoneConstants(L=self.L_A, m=self.m_A)

    @property
    def S_constants(self) -> mo.MonotoneConstants:
        return mo.MonotoneConstants(L=self.L_S, m=self.m_S)


def derive_constants(L_A: float, m_A: float, C_J: float | None = None) -> ConstantsBundle:
    """Closed-form constants of the saddle operator and its inverse.

    L_N     = L_A + 1
    L_S     = max(1, L_A, 1/m_A)
    m_S     = min(1, m_A, m_A / L_A^2)
    L_Beinv = (1/m_S) (1 + 1/m_A)
    L_Ninv  = 1/m_A + max(1, 1/m_A) * (1/m_S) (1 + 1/m_A)
    C_1     = 1 + (1/m_S) (1 + sqrt((1 + L_A^2)(1 + 1/m_A^2)))
    """
    if not (0 < m_A <= L_A):
        raise ValueError(f"need 0 < m_A <= L_A, got ({L_A}, {m_A})")
    L_N = L_A + 1.0
    L_S = max(1.0, L_A, 1.0 / m_A)
    m_S = min(1.0, m_A, m_A / L_A**2)
    L_Beinv = (1.0 / m_S) * (1.0 + 1.0 / m_A)
    L_Ninv = 1.0 / m_A + max(1.0, 1.0 / m_A) * L_Beinv
    C_1 = 1.0 + (1.0 / m_S) * (1.0 + math.sqrt((1.0 + L_A**2) * (1.0 + 1.0 / m_A**2)))
    return ConstantsBundle(
        L_A=L_A, m_A=m_A, L_N=L_N, L_S=L_S, m_S=m_S,
        L_Ninv=L_Ninv, L_Beinv=L_Beinv, C_1=C_1, C_J=C_J,
    )


@dataclass(frozen=True)
class ProblemData:
    """Data (ell, u0) given in closed form; moments come from quadrature.

    ell is represented in gradient form ell(v) = int f0 v + f1 dv/dx so that
    manufactured forcing ell = du/dt + A(u) can be assembled without
    integrating by parts.  Either component may be None (zero).
    """

    ell_f0: Callable | None = None   # (t, x) -> density against v
    ell_f1: Callable | None = None   # (t, x) -> density against dv/dx
    u0: Callable | None = None       # x -> initial value

    @property
    def has_ell(self) -> bool:
        return self.ell_f0 is not None or self.ell_f1 is not None


def assemble_functional(
    mesh_t: Mesh1D,
    spec_t: BasisSpec,
    mesh_x: Mesh1D,
    spec_x: BasisSpec,
    f0: Callable | None,
    f1: Callable | None,
    n_quad: int = 16,
) -> np.ndarray:
    """Moments int f0 (psi_a chi_b) + f1 (psi_a chi_b') over the cylinder."""
    rule = gauss_rule(n_quad)
    xi = np.asarray(rule.points)
    wq = np.asarray(rule.weights)

    t_dofs = element_dofs(mesh_t, spec_t)
    N_t = reference_values(spec_t, xi)
    h_t = mesh_t.lengths
    t_q = mesh_t.points[:-1, None] + h_t[:, None] * xi[None, :]
    w_t = h_t[:, None] * wq[None, :]

    x_dofs = element_dofs(mesh_x, spec_x)
    N_x = reference_values(spec_x, xi)
    h_x = mesh_x.lengths
    x_q = mesh_x.points[:-1, None] + h_x[:, None] * xi[None, :]
    w_x = h_x[:, None] * wq[None, :]
    dN_x = np.stack([-1.0 / h_x, 1.0 / h_x], axis=1)

    dim_t = spec_t.dim(mesh_t)
    dim_x = spec_x.dim(mesh_x)
    t = t_q[:, None, :, None]
    x = x_q[None, :, None, :]
    F = np.zeros((t_dofs.shape[0], x_dofs.shape[0], t_dofs.shape[1], x_dofs.shape[1]))
    if f0 is not None:
        dens = np.broadcast_to(f0(t, x), (t_q.shape[0], x_q.shape[0], xi.size, xi.size))
        wdens = dens * w_t[:, None, :, None] * w_x[None, :, None, :]
        F += np.einsum("txqr,aq,br->txab", wdens, N_t, N_x)
    if f1 is not None:
        dens = np.broadcast_to(f1(t, x), (t_q.shape[0], x_q.shape[0], xi.size, xi.size))
        wdens = dens * w_t[:, None, :, None] * w_x[None, :, None, :]
        S = np.einsum("txqr,aq->txar", wdens, N_t).sum(axis=3)
        F += np.einsum("txa,xb->txab", S, dN_x)

    out = np.zeros((dim_t + 1, dim_x + 1))
    ti = t_dofs[:, None, :, None]
    xj = x_dofs[None, :, None, :]
    np.add.at(out, (np.broadcast_to(ti, F.shape), np.broadcast_to(xj, F.shape)), F)
    return out[:dim_t, :dim_x].reshape(-1)


def u0_moments(data: ProblemData, pair: TensorSpacePair, n_quad: int = 16) -> np.ndarray:
    """Spatial moments int u0 chi_m dx."""
    if data.u0 is None:
        return np.zeros(pair.dim_x)
    rule = gauss_rule(n_quad)
    xi = np.asarray(rule.points)
    wq = np.asarray(rule.weights)
    mesh_x, spec_x = pair.mesh_x, pair.spec_x
    h = mesh_x.lengths
    x_q = mesh_x.points[:-1, None] + h[:, None] * xi[None, :]
    w = h[:, None] * wq[None, :]
    vals = data.u0(x_q) * w
    N_x = reference_values(spec_x, xi)
    dofs = element_dofs(mesh_x, spec_x)
    out = np.zeros(pair.dim_x + 1)
    contrib = np.einsum("xq,bq->xb", vals, N_x)
    np.add.at(out, dofs, contrib)
    return out[: pair.dim_x]


def u0_l2_norm2(data: ProblemData, pair: TensorSpacePair, n_quad: int = 16) -> float:
    """int u0^2 dx by quadrature on the spatial mesh."""
    if data.u0 is None:
        return 0.0
    rule = gauss_rule(n_quad)
    xi = np.asarray(rule.points)
    wq = np.asarray(rule.weights)
    mesh_x = pair.mesh_x
    h = mesh_x.lengths
    x_q = mesh_x.points[:-1, None] + h[:, None] * xi[None, :]
    w = h[:, None] * wq[None, :]
    return float((data.u0(x_q) ** 2 * w).sum())


def assemble_rhs(
    data: ProblemData, pair: TensorSpacePair, n_quad: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Right-hand side (f, g) = (ell on Y^d, -(ell + initial trace) on X^d)."""
    if data.has_ell:
        f = assemble_functional(
            pair.mesh_t_Y, pair.spec_t_Y, pair.mesh_x, pair.spec_x,
            data.ell_f0, data.ell_f1, n_quad,
        )
        ell_X = assemble_functional(
            pair.mesh_t_X, pair.spec_t_X, pair.mesh_x, pair.spec_x,
            data.ell_f0, data.ell_f1, n_quad,
        )
    else:
        f = np.zeros(pair.dim_Y)
        ell_X = np.zeros(pair.dim_X)
    g = -ell_X
    if data.u0 is not None:
        b0 = u0_moments(data, pair, n_quad)
        G = g.reshape(pair.dim_t_X, pair.dim_x)
        G[0] -= b0  # temporal trial basis is nodal: only phi_0 is nonzero at t=0
        g = G.reshape(-1)
    return f, g


def _apply_D(pair: TensorSpacePair, u: np.ndarray) -> np.ndarray:
    U = np.asarray(u, dtype=float).reshape(pair.dim_t_X, pair.dim_x)
    return np.asarray(pair.B_t @ (pair.M_x @ U.T).T).reshape(-1)


def _apply_Dt(pair: TensorSpacePair, lam: np.ndarray) -> np.ndarray:
    L = np.asarray(lam, dtype=float).reshape(pair.dim_t_Y, pair.dim_x)
    return np.asarray(pair.B_t.T @ (pair.M_x @ L.T).T).reshape(-1)


def _apply_trace(pair: TensorSpacePair, u: np.ndarray) -> np.ndarray:
    U = np.asarray(u, dtype=float).reshape(pair.dim_t_X, pair.dim_x)
    out = np.zeros_like(U)
    out[-1] = pair.M_x @ U[-1]
    return out.reshape(-1)


def apply_N(
    state: SaddleState,
    pair: TensorSpacePair,
    op_Y: mo.GalerkinOperator,
    op_X: mo.GalerkinOperator,
) -> tuple[np.ndarray, np.ndarray]:
    """Block action (A_Y lam + D u, D^T lam - A_X u - trace term)."""
    r1 = op_Y.apply(state.lam) + _apply_D(pair, state.u)
    r2 = _apply_Dt(pair, state.lam) - op_X.apply(state.u) - _apply_trace(pair, state.u)
    return r1, r2


def residual(
    state: SaddleState,
    rhs: tuple[np.ndarray, np.ndarray],
    pair: TensorSpacePair,
    op_Y: mo.GalerkinOperator,
    op_X: mo.GalerkinOperator,
) -> tuple[np.ndarray, np.ndarray]:
    n1, n2 = apply_N(state, pair, op_Y, op_X)
    return rhs[0] - n1, rhs[1] - n2


class SchurOperator:
    """S z = A_X z + trace term + g - D^T A_Y^{-1}(f - D z).

    The inner inverse is evaluated by the fixed-point iteration (default) or
    the Newton oracle; the previous inner solution warm-starts the next call.
    """

    def __init__(
        self,
        pair: TensorSpacePair,
        ctx: RieszContext,
        op_Y: mo.GalerkinOperator,
        op_X: mo.GalerkinOperator,
        rhs: tuple[np.ndarray, np.ndarray],
        constants: mo.MonotoneConstants,
        inner_tol: float | None = None,
        inner_mode: str = "newton",
    ):
        self.pair, self.ctx = pair, ctx
        self.op_Y, self.op_X = op_Y, op_X
        self.f, self.g = rhs
        self.constants = constants
        scale = ctx.dual_norm_Y(self.f) if np.any(self.f) else 1.0
        self.inner_tol = inner_tol if inner_tol is not None else 1e-10 * scale
        self.inner_mode = inner_mode
        self._lam = np.zeros(pair.dim_Y)

    def inner_solve(self, z: np.ndarray) -> np.ndarray:
        """lambda(z) = A_Y^{-1}(f - D z), warm-started."""
        target = self.f - _apply_D(self.pair, z)
        if self.inner_mode == "newton":
            res = mo.newton_solve(
                self.op_Y.apply, self.op_Y.jacobian, target, self._lam,
                residual_norm=self.ctx.dual_norm_Y, tol=self.inner_tol,
            )
        else:
            res = mo.zarantonello_solve(
                self.op_Y.apply, self.ctx.riesz_Y_solve, target, self._lam,
                self.constants, tol=self.inner_tol, max_iter=200_000,
            )
            if not res.converged:
                raise NotConvergedError("inner solve did not converge", best=res.x)
        self._lam = res.x
        return res.x

    def apply(self, z: np.ndarray) -> np.ndarray:
        lam = self.inner_solve(z)
        return (
            self.op_X.apply(z)
            + _apply_trace(self.pair, z)
            + self.g
            - _apply_Dt(self.pair, lam)
        )


def solve_reference(
    rhs: tuple[np.ndarray, np.ndarray],
    pair: TensorSpacePair,
    op_Y: mo.GalerkinOperator,
    op_X: mo.GalerkinOperator,
    ctx: RieszContext,
    tol: float = 1e-12,
    max_outer: int = 60,
) -> SaddleState:
    """High-accuracy discrete solution used as the test oracle.

    Outer damped Newton on the Schur operator with exact (Newton) inner
    solves; each outer step solves the coupled sparse 2x2 linearization.
    Falls back to a long fixed-point run on the Schur operator if Newton
    stalls.  The returned state has product dual residual at most tol.
    """
    f, g = rhs
    D = sp.kron(pair.B_t, pair.M_x, format="csr")
    nY = pair.dim_Y
    trace_block = sp.lil_matrix((pair.dim_X, pair.dim_X))
    tail = slice((pair.dim_t_X - 1) * pair.dim_x, pair.dim_X)
    trace_block[tail, tail] = pair.M_x
    trace_block = trace_block.tocsr()

    def product_residual(state: SaddleState) -> float:
        rY, rX = residual(state, rhs, pair, op_Y, op_X)
        return ctx.dual_norm_Y(rY) + ctx.dual_norm_X(rX)

    z = np.zeros(pair.dim_X)
    inner_tol = max(tol / 20.0, 1e-15)
    mu_consts = mo.constants_from_mu(op_Y.mu)
    schur = SchurOperator(
        pair, ctx, op_Y, op_X, rhs, mu_consts, inner_tol=inner_tol, inner_mode="newton"
    )

    def schur_value(z_vec):
        lam = schur.inner_solve(z_vec)
        return (
            op_X.apply(z_vec) + _apply_trace(pair, z_vec) + g - _apply_Dt(pair, lam)
        )

    try:
        sz = schur_value(z)
        rn = ctx.dual_norm_X(sz)
        for _ in range(max_outer):
            state = SaddleState(schur._lam.copy(), z.copy())
            if product_residual(state) <= tol:
                return state
            J = sp.bmat(
                [
                    [op_Y.jacobian(schur._lam), D],
                    [D.T, -(op_X.jacobian(z) + trace_block)],
                ],
                format="csc",
            )
            delta = lu_factorize(J).solve(np.concatenate([np.zeros(nY), sz]))[nY:]
            alpha = 1.0
            for _ in range(40):
                z_new = z + alpha * delta
                sz_new = schur_value(z_new)
                rn_new = ctx.dual_norm_X(sz_new)
                if rn_new < rn or rn_new <= tol / 4:
                    break
                alpha *= 0.5
            else:
                raise NotConvergedError("outer newton stalled", best=z)
            z, sz, rn = z_new, sz_new, rn_new
        state = SaddleState(schur._lam.copy(), z.copy())
        if product_residual(state) <= tol:
            return state
        raise NotConvergedError("outer newton hit the iteration cap", best=state)
    except NotConvergedError:
        # long fixed-point fallback on the Schur operator
        s_consts = derive_constants(mu_consts.L, mu_consts.m).S_constants
        res = mo.zarantonello_solve(
            schur.apply, ctx.riesz_X_solve, np.zeros(pair.dim_X), z,
            s_consts, tol=tol / 10.0, max_iter=500_000,
        )
        lam = schur.inner_solve(res.x)
        state = SaddleState(lam, res.x)
        if product_residual(state) > tol:
            raise NotConvergedError("reference solve failed", best=state)
        return state


# -- manufactured problems ----------------------------------------------------


@dataclass(frozen=True)
class ManufacturedProblem:
    """Closed-form solution with matching data for convergence studies."""

    name: str
    mu: mo.MuCoefficient
    data: ProblemData
    u_exact: Callable      # (t, x) -> value
    u_exact_t: Callable
    u_exact_x: Callable


def heat_problem() -> ManufacturedProblem:
    """u = sin(pi x) exp(-pi^2 t): solves the heat equation with ell = 0."""
    u = lambda t, x: np.sin(np.pi * x) * np.exp(-np.pi**2 * t)
    return ManufacturedProblem(
        name="heat",
        mu=mo.make_mu("constant", c=1.0),
        data=ProblemData(u0=lambda x: np.sin(np.pi * x)),
        u_exact=u,
        u_exact_t=lambda t, x: -np.pi**2 * u(t, x),
        u_exact_x=lambda t, x: np.pi * np.cos(np.pi * x) * np.exp(-np.pi**2 * t),
    )


def quasilinear_problem(mu_name: str = "one-plus-inv", **mu_params) -> ManufacturedProblem:
    """Same exact solution, forcing manufactured as ell = du/dt + A(u)."""
    mu = mo.make_mu(mu_name, **mu_params)
    u = lambda t, x: np.sin(np.pi * x) * np.exp(-np.pi**2 * t)
    u_t = lambda t, x: -np.pi**2 * u(t, x)
    u_x = lambda t, x: np.pi * np.cos(np.pi * x) * np.exp(-np.pi**2 * t)

    def f1(t, x):
        g = u_x(t, x)
        return mu.fn(t, x, g**2) * g

    return ManufacturedProblem(
        name=f"quasilinear-{mu.name}",
        mu=mu,
        data=ProblemData(ell_f0=u_t, ell_f1=f1, u0=lambda x: np.sin(np.pi * x)),
        u_exact=u, u_exact_t=u_t, u_exact_x=u_x,
    )


def interpolate_onto(pair: TensorSpacePair, fn: Callable) -> np.ndarray:
    """Nodal interpolation of (t, x) -> value onto the trial space."""
    t_nodes = pair.mesh_t_X.points
    x_nodes = pair.mesh_x.points[1:-1]
    return fn(t_nodes[:, None], x_nodes[None, :]).reshape(-1)
