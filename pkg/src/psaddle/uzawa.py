"""Inexact Uzawa iteration with inner fixed-point loops, plus its a posteriori bound.

Each outer step freezes u, runs L damped fixed-point steps on the test-space
block (warm-started from the previous outer iterate), then takes one damped
step on the Schur residual of u.  The number L of inner steps comes from the
convergence theory: with

    C_3 = (1/sigma_hat)((sigma_hat - sigma_S)/theta_S* + 1/m_A)

and L the smallest integer with sigma_A^L (C_3 + 1/m_A) <= (sigma_hat - sigma_S)/theta_S*,
both error components contract R-linearly with factor sigma_hat.

The stopping rule is the computable two-sided residual estimate

    eta = ||r_Y||_{(Y^d)'} + ||r_X||_{(X^d)'},

which brackets the true product error within [1/L_N, L_Ninv].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from psaddle import monotone as mo
from psaddle.errors import NotConvergedError, PsaddleError
from psaddle.riesz import RieszContext
from psaddle.spaces import TensorSpacePair
from psaddle.system import ConstantsBundle, SaddleState, residual

__all__ = [
    "UzawaConfig",
    "UzawaTrace",
    "plan_inner_count",
    "make_config",
    "adapted_schur_constants",
    "run_inexact_uzawa",
    "aposteriori_estimate",
]


@dataclass(frozen=True)
class UzawaConfig:
    sigma_hat_S: float
    C_3: float
    L: int
    theta_star_A: float
    theta_star_S: float
    sigma_A: float
    sigma_S: float
    tol: float = 1e-8
    max_outer: int = 200

    def __post_init__(self):
        if not (self.sigma_S < self.sigma_hat_S < 1.0):
            raise PsaddleError(
                f"sigma_hat_S must lie in (sigma_S, 1) = ({self.sigma_S}, 1), "
                f"got {self.sigma_hat_S}"
            )
        if self.L < 1:
            raise PsaddleError("inner iteration count must be at least 1")


def plan_inner_count(
    bundle: ConstantsBundle,
    sigma_hat_S: float,
    S_constants: mo.MonotoneConstants | None = None,
) -> tuple[float, int]:
    """C_3 and the smallest admissible inner iteration count L.

    Evaluates the defining inequality directly over increasing L rather than
    trusting a logarithm, so the returned L is the smallest valid integer.
    S_constants overrides the bundle's Schur constants (preconditioned mode).
    """
    cA = bundle.A_constants
    cS = S_constants or bundle.S_constants
    if not (cS.sigma < sigma_hat_S < 1.0):
        raise PsaddleError(
            f"sigma_hat_S={sigma_hat_S} outside (sigma_S, 1) = ({cS.sigma}, 1)"
        )
    target = (sigma_hat_S - cS.sigma) / cS.theta_star
    C_3 = (target + 1.0 / cA.m) / sigma_hat_S
    budget = C_3 + 1.0 / cA.m
    if cA.sigma == 0.0:
        return C_3, 1
    L = 1
    power = cA.sigma
    while power * budget > target:
        L += 1
        power *= cA.sigma
        if L > 10_000_000:
            raise NotConvergedError("inner iteration count exploded; sigma_hat too tight")
    return C_3, L


def make_config(
    bundle: ConstantsBundle,
    sigma_hat_S: float | None = None,
    tol: float = 1e-8,
    max_outer: int = 200,
    L_practical: int | None = None,
    S_constants: mo.MonotoneConstants | None = None,
) -> UzawaConfig:
    """Config with the theoretical L, or a practical override.

    The default sigma_hat is the midpoint (1 + sigma_S)/2 of the admissible
    range.  L_practical replaces the theoretical inner count; the a priori
    envelope is only guaranteed for the theoretical one.  S_constants feeds
    adapted Schur constants for preconditioned runs.
    """
    cA = bundle.A_constants
    cS = S_constants or bundle.S_constants
    if sigma_hat_S is None:
        sigma_hat_S = 0.5 * (1.0 + cS.sigma)
    C_3, L = plan_inner_count(bundle, sigma_hat_S, S_constants=S_constants)
    if L_practical is not None:
        L = int(L_practical)
    return UzawaConfig(
        sigma_hat_S=sigma_hat_S, C_3=C_3, L=L,
        theta_star_A=cA.theta_star, theta_star_S=cS.theta_star,
        sigma_A=cA.sigma, sigma_S=cS.sigma,
        tol=tol, max_outer=max_outer,
    )


@dataclass
class UzawaTrace:
    """Per-outer-iteration record.

    Row k is written after the inner loop of outer step k, i.e. at the
    monitored pair (lambda^(k+1), u^(k)): eta and the residual norms refer
    to that pair, err_lambda to lambda^(k+1), err_u to u^(k).  Each row also
    books the work done in that outer step: inner_count Riesz solves on the
    test space, one Riesz solve on the trial space, and napply nonlinear
    operator applications.
    """

    k: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    res_Y: list = field(default_factory=list)
    res_X: list = field(default_factory=list)
    err_u: list = field(default_factory=list)
    err_lambda: list = field(default_factory=list)
    inner_count: list = field(default_factory=list)
    napply: list = field(default_factory=list)
    riesz_X_solves: list = field(default_factory=list)
    converged: bool = False

    COLUMNS = ("k", "eta", "res_Y", "res_X", "err_u", "err_lambda", "inner_count")

    def rows(self):
        for i in range(len(self.k)):
            yield (
                self.k[i], self.eta[i], self.res_Y[i], self.res_X[i],
                self.err_u[i], self.err_lambda[i], self.inner_count[i],
            )


def aposteriori_estimate(
    state: SaddleState,
    rhs: tuple[np.ndarray, np.ndarray],
    pair: TensorSpacePair,
    op_Y: mo.GalerkinOperator,
    op_X: mo.GalerkinOperator,
    ctx: RieszContext,
) -> tuple[float, np.ndarray, np.ndarray]:
    """eta = ||r_Y||_{(Y^d)'} + ||r_X||_{(X^d)'} for the residual pair.

    Guarantee for nonzero error: 1/L_N <= (true product error)/eta <= L_Ninv.
    """
    r_Y, r_X = residual(state, rhs, pair, op_Y, op_X)
    eta = ctx.dual_norm_Y(r_Y) + ctx.dual_norm_X(r_X)
    return eta, r_Y, r_X


def adapted_schur_constants(
    bundle: ConstantsBundle, lam_min: float, lam_max: float
) -> mo.MonotoneConstants:
    """Schur constants after replacing the trial Riesz solve by an operator P
    with lam_min P <= R_X <= lam_max P (spectral bounds of P^{-1} R_X):
    in the P-norm the operator stays Lipschitz and strongly monotone with
    L = L_S lam_max and m = m_S lam_min."""
    if not (0 < lam_min <= lam_max):
        raise PsaddleError("invalid spectral bounds")
    return mo.MonotoneConstants(L=bundle.L_S * lam_max, m=bundle.m_S * lam_min)


def run_inexact_uzawa(
    rhs: tuple[np.ndarray, np.ndarray],
    pair: TensorSpacePair,
    op_Y: mo.GalerkinOperator,
    op_X: mo.GalerkinOperator,
    ctx: RieszContext,
    cfg: UzawaConfig,
    start: SaddleState | None = None,
    reference: SaddleState | None = None,
    raise_on_cap: bool = False,
    apply_Rinv_Y=None,
    apply_Rinv_X=None,
) -> tuple[SaddleState, UzawaTrace]:
    """Inexact Uzawa iteration.

    Inner update (L times, warm-started from the previous outer iterate):
        lambda <- lambda - theta_A* R_Y^{-1} [A_Y lambda - (f - D u)]
    Outer update:
        u <- u - theta_S* R_X^{-1} [A_X u + trace term + g - D^T lambda]

    Stops when eta, evaluated at (lambda^(k+1), u^(k)), drops below cfg.tol;
    the returned state is that monitored pair.  If `reference` is given the
    trace records true errors against it (test mode).

    The exact Riesz solves can be replaced by spectrally equivalent
    preconditioners through apply_Rinv_Y / apply_Rinv_X; the config must
    then carry constants adapted to the preconditioner norms (see
    adapted_schur_constants), and eta becomes an estimate in those norms.
    """
    f, g = rhs
    solve_Y = apply_Rinv_Y or ctx.riesz_Y_solve
    solve_X = apply_Rinv_X or ctx.riesz_X_solve
    lam = start.lam.copy() if start is not None else np.zeros(pair.dim_Y)
    u = start.u.copy() if start is not None else np.zeros(pair.dim_X)
    trace = UzawaTrace()

    for k in range(cfg.max_outer):
        target = f - ctx.apply_D(u)
        napply = 0
        for _ in range(cfg.L):
            r_inner = op_Y.apply(lam) - target
            napply += 1
            lam = lam - cfg.theta_star_A * solve_Y(r_inner)

        r_Y = target - op_Y.apply(lam)
        r_X = g - ctx.apply_Dt(lam) + op_X.apply(u) + ctx.apply_trace_term(u)
        napply += 2
        dY = solve_Y(r_Y)
        dX = solve_X(r_X)
        eta = math.sqrt(max(r_Y @ dY, 0.0)) + math.sqrt(max(r_X @ dX, 0.0))

        trace.k.append(k)
        trace.eta.append(eta)
        trace.res_Y.append(math.sqrt(max(r_Y @ dY, 0.0)))
        trace.res_X.append(math.sqrt(max(r_X @ dX, 0.0)))
        trace.inner_count.append(cfg.L)
        trace.napply.append(napply)
        trace.riesz_X_solves.append(1)
        if reference is not None:
            trace.err_u.append(ctx.norm_X_delta(reference.u - u))
            trace.err_lambda.append(ctx.norm_Y(reference.lam - lam))
        else:
            trace.err_u.append(float("nan"))
            trace.err_lambda.append(float("nan"))

        if eta <= cfg.tol:
            trace.converged = True
            return SaddleState(lam, u), trace

        # r_X equals the u-update bracket, so the step reuses dX
        u = u - cfg.theta_star_S * dX

    if raise_on_cap:
        raise NotConvergedError(
            f"uzawa did not reach tol={cfg.tol} in {cfg.max_outer} outer iterations",
            best=SaddleState(lam, u),
        )
    return SaddleState(lam, u), trace
