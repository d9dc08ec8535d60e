"""Quasi-linear spatial operator, its constant calculus, and fixed-point solvers.

The operator acts on space-time functions w through

    (A w)(v) = int_J int_Omega mu(t, x, |dw/dx|^2) dw/dx dv/dx dx dt,

where the scalar nonlinearity mu satisfies, for all r >= s >= 0,

    m_mu (r - s) <= mu(.,., r^2) r - mu(.,., s^2) s <= M_mu (r - s),

which makes A Lipschitz continuous with constant 3 M_mu and strongly
monotone with constant m_mu, and the same constants carry over to its
Galerkin restrictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from psaddle.core_linalg import as_csr, lu_factorize
from psaddle.errors import NotConvergedError, PsaddleError
from psaddle.spaces import (
    TensorSpacePair,
    element_dofs,
    gauss_rule,
    reference_values,
)

__all__ = [
    "MuCoefficient",
    "MonotoneConstants",
    "GalerkinOperator",
    "make_mu",
    "constants_from_mu",
    "inverse_constants",
    "empirical_mu_bounds",
    "zarantonello_solve",
    "newton_solve",
]


@dataclass(frozen=True)
class MuCoefficient:
    """Scalar nonlinearity mu(t, x, s) with its monotonicity bounds.

    `fn` must broadcast over numpy arrays; `dfn_ds` is the partial derivative
    with respect to s and is only needed by the Newton oracle.
    """

    fn: Callable
    m_mu: float
    M_mu: float
    dfn_ds: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if not (0 < self.m_mu <= self.M_mu):
            raise PsaddleError(f"invalid mu bounds ({self.m_mu}, {self.M_mu})")


def make_mu(name: str, **params) -> MuCoefficient:
    """Named registry used by the experiment configs.

    constant      mu = c                      bounds (c, c)
    one-plus-inv  mu = 1 + 1/(1+s)            bounds (7/8, 2), slope extremum at s = 3
    bounded-ramp  mu = a + b s/(1+s)          bounds (a, a + 9b/8), extremum at s = 3
    """
    if name == "constant":
        c = float(params.get("c", 1.0))
        if c <= 0:
            raise PsaddleError("constant mu must be positive")
        return MuCoefficient(
            fn=lambda t, x, s: np.full_like(np.asarray(s, dtype=float), c),
            dfn_ds=lambda t, x, s: np.zeros_like(np.asarray(s, dtype=float)),
            m_mu=c, M_mu=c, name=f"constant({c})",
        )
    if name == "one-plus-inv":
        return MuCoefficient(
            fn=lambda t, x, s: 1.0 + 1.0 / (1.0 + s),
            dfn_ds=lambda t, x, s: -1.0 / (1.0 + s) ** 2,
            m_mu=7.0 / 8.0, M_mu=2.0, name="one-plus-inv",
        )
    if name == "bounded-ramp":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))
        if a <= 0 or b < 0:
            raise PsaddleError("bounded-ramp needs a > 0, b >= 0")
        return MuCoefficient(
            fn=lambda t, x, s: a + b * s / (1.0 + s),
            dfn_ds=lambda t, x, s: b / (1.0 + s) ** 2,
            m_mu=a, M_mu=a + 9.0 * b / 8.0, name=f"bounded-ramp({a},{b})",
        )
    raise PsaddleError(f"unknown mu name {name!r}")


@dataclass(frozen=True)
class MonotoneConstants:
    """Lipschitz/monotonicity pair with the induced iteration numbers."""

    L: float
    m: float

    def __post_init__(self):
        if not (0 < self.m <= self.L):
            raise PsaddleError(f"need 0 < m <= L, got (L, m) = ({self.L}, {self.m})")

    @property
    def theta_star(self) -> float:
        """Optimal damping m / L^2 of the fixed-point iteration."""
        return self.m / self.L**2

    @property
    def sigma(self) -> float:
        """Contraction factor sqrt(1 - m^2 / L^2)."""
        return math.sqrt(max(0.0, 1.0 - (self.m / self.L) ** 2))


def constants_from_mu(mu: MuCoefficient) -> MonotoneConstants:
    """(L, m) = (3 M_mu, m_mu) for the quasi-linear operator."""
    return MonotoneConstants(L=3.0 * mu.M_mu, m=mu.m_mu)


def inverse_constants(c: MonotoneConstants) -> MonotoneConstants:
    """Constants of the inverse map: L_inv = 1/m, m_inv = m / L^2."""
    return MonotoneConstants(L=1.0 / c.m, m=c.m / c.L**2)


def empirical_mu_bounds(mu_fn, r_max: float, n: int = 100_000) -> tuple[float, float]:
    """Extremal finite-difference slopes of g(r) = mu(r^2) r on a uniform grid.

    Validates user-supplied (m_mu, M_mu); fails if the sampled slope is not
    positive, i.e. the scalar map is not strongly monotone.
    """
    if n < 100:
        raise PsaddleError("need at least 100 sample points")
    r = np.linspace(0.0, r_max, n + 1)
    g = np.asarray(mu_fn(r**2)) * r
    slopes = np.diff(g) / np.diff(r)
    m_hat, M_hat = float(slopes.min()), float(slopes.max())
    if m_hat <= 0:
        raise PsaddleError(f"mu is not strongly monotone on [0, {r_max}] (min slope {m_hat:.3e})")
    return m_hat, M_hat


class GalerkinOperator:
    """Galerkin action of the quasi-linear operator on Y^delta or X^delta.

    `side` selects the temporal axis of the tensor space the operator is
    restricted to; the spatial axis is shared.  Application and the Gateaux
    derivative are evaluated with tensor Gauss quadrature per time-space
    element (3x3 points by default: exact for the linear case, and well
    below test tolerances for the smooth nonlinearities bundled here).
    """

    def __init__(self, pair: TensorSpacePair, side: str, mu: MuCoefficient, n_quad: int = 3):
        if side not in ("Y", "X"):
            raise PsaddleError(f"side must be 'Y' or 'X', got {side!r}")
        self.pair = pair
        self.side = side
        self.mu = mu
        self.n_quad = n_quad

        if side == "Y":
            mesh_t, spec_t = pair.mesh_t_Y, pair.spec_t_Y
            self.dim_t = pair.dim_t_Y
        else:
            mesh_t, spec_t = pair.mesh_t_X, pair.spec_t_X
            self.dim_t = pair.dim_t_X
        self.dim_x = pair.dim_x
        self.dim = self.dim_t * self.dim_x

        rule = gauss_rule(n_quad)
        xi = np.asarray(rule.points)
        wq = np.asarray(rule.weights)

        self._t_dofs = element_dofs(mesh_t, spec_t)              # (net, nlt)
        self._N_t = reference_values(spec_t, xi)                 # (nlt, nq)
        h_t = mesh_t.lengths
        self._t_q = mesh_t.points[:-1, None] + h_t[:, None] * xi[None, :]
        self._w_t = h_t[:, None] * wq[None, :]                   # (net, nq)

        mesh_x, spec_x = pair.mesh_x, pair.spec_x
        self._x_dofs = element_dofs(mesh_x, spec_x)              # (nex, 2)
        h_x = mesh_x.lengths
        self._x_q = mesh_x.points[:-1, None] + h_x[:, None] * xi[None, :]
        self._w_x = h_x[:, None] * wq[None, :]                   # (nex, nq)
        self._dN_x = np.stack([-1.0 / h_x, 1.0 / h_x], axis=1)   # (nex, 2)

    # -- gather/scatter with -1 masking via a padded row/column ------------

    def _gather(self, w: np.ndarray) -> np.ndarray:
        W = np.asarray(w, dtype=float).reshape(self.dim_t, self.dim_x)
        Wp = np.zeros((self.dim_t + 1, self.dim_x + 1))
        Wp[: self.dim_t, : self.dim_x] = W
        ti = self._t_dofs  # -1 maps to the padded zero slot
        xi = self._x_dofs
        return Wp[ti[:, None, :, None], xi[None, :, None, :]]    # (net, nex, nlt, 2)

    def _scatter(self, F: np.ndarray) -> np.ndarray:
        out = np.zeros((self.dim_t + 1, self.dim_x + 1))
        ti = self._t_dofs
        xi = self._x_dofs
        np.add.at(out, (ti[:, None, :, None], xi[None, :, None, :]), F)
        return out[: self.dim_t, : self.dim_x].reshape(-1)

    def _gradients(self, w: np.ndarray) -> np.ndarray:
        """d/dx of the expansion at quadrature points, (net, nex, nq)."""
        Wloc = self._gather(w)
        return np.einsum("txab,aq,xb->txq", Wloc, self._N_t, self._dN_x)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Dual coefficients (A w)(basis function)."""
        g = self._gradients(w)                                   # (net, nex, qt)
        s = (g**2)[:, :, :, None]                                # const in qx
        t = self._t_q[:, None, :, None]
        x = self._x_q[None, :, None, :]
        mu_vals = self.mu.fn(t, x, s)
        # sum over qx of mu * w_x, then weight by g * w_t
        sx = np.einsum("txqr,xr->txq", mu_vals, self._w_x)
        coeff = sx * g * self._w_t[:, None, :]
        F = np.einsum("txq,aq,xb->txab", coeff, self._N_t, self._dN_x)
        return self._scatter(F)

    def jacobian(self, w: np.ndarray) -> sp.csr_matrix:
        """Gateaux derivative at w: a weighted stiffness matrix.

        The weight mu(s) + 2 s mu'(s) equals the slope of r -> mu(r^2) r at
        r = |dw/dx| and therefore lies in [m_mu, M_mu]; the Jacobian is SPD.
        """
        if self.mu.dfn_ds is None:
            raise PsaddleError("mu has no derivative; Newton is unavailable")
        g = self._gradients(w)
        s = (g**2)[:, :, :, None]
        t = self._t_q[:, None, :, None]
        x = self._x_q[None, :, None, :]
        omega = self.mu.fn(t, x, s) + 2.0 * s * self.mu.dfn_ds(t, x, s)
        wsum = np.einsum("txqr,xr->txq", omega, self._w_x) * self._w_t[:, None, :]
        T2 = np.einsum("aq,cq,txq->txac", self._N_t, self._N_t, wsum)
        K = np.einsum("txac,xb,xd->txabcd", T2, self._dN_x, self._dN_x)

        net, nlt = self._t_dofs.shape
        nex = self._x_dofs.shape[0]
        ti = self._t_dofs[:, None, :, None]                      # (net,1,nlt,1)
        xi = self._x_dofs[None, :, None, :]                      # (1,nex,1,2)
        gdof = np.where((ti >= 0) & (xi >= 0), ti * self.dim_x + xi, -1)
        gdof = np.broadcast_to(gdof, (net, nex, nlt, 2))
        rows = np.broadcast_to(
            gdof[:, :, :, :, None, None], K.shape
        ).reshape(-1)
        cols = np.broadcast_to(
            gdof[:, :, None, None, :, :], K.shape
        ).reshape(-1)
        data = K.reshape(-1)
        keep = (rows >= 0) & (cols >= 0)
        J = sp.coo_matrix(
            (data[keep], (rows[keep], cols[keep])), shape=(self.dim, self.dim)
        )
        return as_csr(J)


@dataclass
class IterationResult:
    x: np.ndarray
    iterations: int
    final_step_norm: float
    converged: bool
    history: list = field(default_factory=list)


def zarantonello_solve(
    apply_G,
    riesz_solve,
    f: np.ndarray,
    x0: np.ndarray,
    constants: MonotoneConstants,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    callback=None,
) -> IterationResult:
    """Damped Picard iteration x <- x - theta* R^{-1}(G x - f).

    With the optimal damping theta* = m/L^2 the error contracts with factor
    sigma = sqrt(1 - m^2/L^2) per step in the norm realized by riesz_solve.
    Stops when the step norm drops below tol.
    """
    theta = constants.theta_star
    x = np.asarray(x0, dtype=float).copy()
    step_norm = np.inf
    for it in range(1, max_iter + 1):
        res = apply_G(x) - f
        d = riesz_solve(res)
        step_norm = theta * math.sqrt(max(res @ d, 0.0))
        x = x - theta * d
        if callback is not None:
            callback(it, x, step_norm)
        if step_norm <= tol:
            return IterationResult(x, it, step_norm, True)
    return IterationResult(x, max_iter, step_norm, False)


def newton_solve(
    apply_G,
    jacobian,
    f: np.ndarray,
    x0: np.ndarray,
    residual_norm=None,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> IterationResult:
    """Damped Newton with step halving until the residual norm decreases.

    Reference-solution oracle: independent of the fixed-point solver path.
    `residual_norm` defaults to the Euclidean norm of the residual vector;
    pass a dual norm for stopping criteria in the right metric.
    """
    norm = residual_norm or (lambda r: float(np.linalg.norm(r)))
    x = np.asarray(x0, dtype=float).copy()
    r = apply_G(x) - f
    rn = norm(r)
    for it in range(1, max_iter + 1):
        if rn <= tol:
            return IterationResult(x, it - 1, rn, True)
        J = lu_factorize(jacobian(x))
        d = J.solve(-r)
        alpha = 1.0
        for _ in range(40):
            x_new = x + alpha * d
            r_new = apply_G(x_new) - f
            rn_new = norm(r_new)
            if rn_new < rn or rn_new <= tol:
                break
            alpha *= 0.5
        else:
            raise NotConvergedError("newton line search stalled", best=x)
        x, r, rn = x_new, r_new, rn_new
    if rn <= tol:
        return IterationResult(x, max_iter, rn, True)
    raise NotConvergedError(
        f"newton did not reach tol={tol:.1e} (residual {rn:.3e})", best=x,
        iterations=max_iter,
    )
