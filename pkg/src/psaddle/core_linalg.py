"""Sparse SPD solves, Kronecker application, and extremal eigenvalue tools.

Matrices are scipy CSR/CSC throughout (compressed-row storage with unique,
sorted indices).  All factorizations are direct: at desk scale every SPD
system here is banded or 2D-grid sparse, so direct solves are exact up to
round-off and remove inner-solver tolerances from every downstream check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from psaddle.errors import DimensionMismatchError, NotConvergedError, NotSpdError

__all__ = [
    "SpdFactorization",
    "KroneckerOperator",
    "spd_factorize",
    "spd_solve",
    "lu_factorize",
    "kron_apply",
    "extremal_generalized_eigen",
    "spectral_bounds",
    "condition_number_estimate",
]


def as_csr(matrix) -> sp.csr_matrix:
    """Canonical CSR with summed duplicates and sorted indices."""
    m = sp.csr_matrix(matrix)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _check_symmetric(matrix: sp.spmatrix, rtol: float = 1e-10) -> None:
    diff = abs(matrix - matrix.T)
    scale = abs(matrix).max() or 1.0
    if diff.count_nonzero() and diff.max() > rtol * scale:
        raise NotSpdError(
            f"matrix is not symmetric: max asymmetry {diff.max():.3e} "
            f"(scale {scale:.3e})"
        )


@dataclass(frozen=True)
class SpdFactorization:
    """Direct factorization of a symmetric positive definite matrix.

    Produced with SuperLU in symmetric mode and no row pivoting, so the
    diagonal of U carries the inertia: any non-positive entry means the
    matrix was not positive definite and construction fails.
    """

    matrix: sp.csr_matrix
    _lu: spla.SuperLU = field(repr=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))


def spd_factorize(matrix) -> SpdFactorization:
    """Factor a symmetric positive definite matrix for repeated solves."""
    m = as_csr(matrix)
    if m.shape[0] != m.shape[1]:
        raise NotSpdError(f"matrix is not square: {m.shape}")
    _check_symmetric(m)
    try:
        lu = spla.splu(
            m.tocsc(),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:  # singular to machine precision
        raise NotSpdError(f"factorization failed: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0.0):
        raise NotSpdError("matrix is not positive definite (non-positive pivot)")
    return SpdFactorization(matrix=m, _lu=lu)


def spd_solve(fact: SpdFactorization, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for the factored SPD matrix A."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != fact.dim:
        raise DimensionMismatchError(f"rhs length {b.shape[0]} != dim {fact.dim}")
    return fact.solve(b)


def lu_factorize(matrix) -> spla.SuperLU:
    """Plain sparse LU for symmetric indefinite systems (saddle matrices)."""
    return spla.splu(sp.csc_matrix(matrix))


@dataclass(frozen=True)
class KroneckerOperator:
    """Operator (B_t otimes C_x) acting on time-major stacked vectors."""

    time_factor: sp.csr_matrix
    space_factor: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return (
            self.time_factor.shape[0] * self.space_factor.shape[0],
            self.time_factor.shape[1] * self.space_factor.shape[1],
        )

    def apply(self, v: np.ndarray) -> np.ndarray:
        return kron_apply(self, v)


def kron_apply(op: KroneckerOperator, v: np.ndarray) -> np.ndarray:
    """Apply (B otimes C) without forming the product matrix.

    v is interpreted time-major: v[i_t * n_x + i_x].  The result equals
    reshape(B @ V @ C.T) for V = reshape(v, (n_t, n_x)).
    """
    nt_in = op.time_factor.shape[1]
    nx_in = op.space_factor.shape[1]
    v = np.asarray(v, dtype=float)
    if v.shape[0] != nt_in * nx_in:
        raise DimensionMismatchError(
            f"vector length {v.shape[0]} != {nt_in} * {nx_in}"
        )
    V = v.reshape(nt_in, nx_in)
    out = op.time_factor @ (op.space_factor @ V.T).T
    return np.asarray(out).reshape(-1)


def _complement_basis(kernel: np.ndarray, dim: int) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of span(kernel)."""
    if kernel is None or kernel.size == 0:
        return np.eye(dim)
    kernel = np.atleast_2d(np.asarray(kernel, dtype=float))
    if kernel.shape[0] != dim:
        kernel = kernel.T
    q, _ = np.linalg.qr(kernel)
    full = np.eye(dim) - q @ q.T
    u, s, _ = np.linalg.svd(full)
    rank = int(np.sum(s > 1e-12))
    return u[:, :rank]


def extremal_generalized_eigen(
    A,
    B,
    which: str = "smallest",
    constraint_kernel: np.ndarray | None = None,
    dense_cutoff: int = 1500,
    tol: float = 1e-10,
    max_iter: int = 500,
) -> tuple[float, np.ndarray]:
    """Extremal eigenpair of A x = lam B x, optionally deflating a known kernel.

    A must be symmetric (positive semi-definite on the admissible subspace),
    B symmetric positive definite there.  `constraint_kernel` columns span
    the subspace to remove before the extremal value is sought (e.g. the
    time-constant functions for the temporal inf-sup factor).

    Small pencils are reduced to the orthogonal complement and solved
    densely; larger ones go through LOBPCG with the kernel as constraint.
    """
    if which not in ("smallest", "largest"):
        raise ValueError(f"which must be smallest|largest, got {which!r}")
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n = A.shape[0]
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatchError(f"pencil shapes {A.shape} vs {B.shape}")

    if n <= dense_cutoff:
        Q = _complement_basis(constraint_kernel, n)
        Ared = Q.T @ (A @ Q)
        Bred = Q.T @ (B @ Q)
        Ared = 0.5 * (Ared + Ared.T)
        Bred = 0.5 * (Bred + Bred.T)
        vals, vecs = sla.eigh(Ared, Bred)
        idx = 0 if which == "smallest" else -1
        lam = float(vals[idx])
        vec = Q @ vecs[:, idx]
        return lam, vec

    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, 3))
    Y = None
    if constraint_kernel is not None and constraint_kernel.size:
        Y = np.atleast_2d(np.asarray(constraint_kernel, dtype=float))
        if Y.shape[0] != n:
            Y = Y.T
    try:
        vals, vecs = spla.lobpcg(
            A, X, B=B, Y=Y, largest=(which == "largest"), tol=tol, maxiter=max_iter
        )
    except Exception as exc:
        raise NotConvergedError(f"lobpcg failed: {exc}") from exc
    idx = int(np.argmax(vals)) if which == "largest" else int(np.argmin(vals))
    lam = float(vals[idx])
    vec = vecs[:, idx]
    ray = float(vec @ (A @ vec)) / float(vec @ (B @ vec))
    if abs(ray - lam) > 1e-6 * max(abs(lam), 1e-30):
        raise NotConvergedError(
            f"eigen iteration did not converge: ritz {lam}, rayleigh {ray}",
            best=(lam, vec),
        )
    return lam, vec


def spectral_bounds(
    apply_A,
    apply_Pinv,
    dim: int,
    tol: float = 0.02,
    max_iter: int = 400,
    seed: int = 0,
) -> tuple[float, float]:
    """Extremal eigenvalue estimates (smallest, largest) of P^{-1} A.

    Both operators must be SPD.  Runs a Lanczos recurrence for the pencil
    (A, P) in the A-inner product, which only needs applications of A and
    of P^{-1}; the basis is fully reorthogonalized, so for iteration counts
    reaching `dim` the extremal Ritz values are exact up to round-off.
    """
    rng = np.random.default_rng(seed)
    jmax = min(dim, max_iter)

    q = rng.standard_normal(dim)
    aq = apply_A(q)
    beta = np.sqrt(q @ aq)
    if beta <= 0:
        raise NotSpdError("operator A is not positive definite on the start vector")
    q, aq = q / beta, aq / beta

    Qs, AQs = [q], [aq]
    alphas, betas = [], []
    prev = None
    window: list[float] = []
    exact = False
    stabilized = False
    extremes = None
    for j in range(jmax):
        w = apply_Pinv(AQs[j])
        alpha = w @ AQs[j]
        alphas.append(alpha)
        w = w - alpha * Qs[j]
        if j > 0:
            w = w - betas[j - 1] * Qs[j - 1]
        # full reorthogonalization in the A-inner product
        for qi, aqi in zip(Qs, AQs):
            w = w - (w @ aqi) * qi
        aw = apply_A(w)
        beta = np.sqrt(max(w @ aw, 0.0))
        T = sp.diags(
            [betas, alphas, betas], offsets=[-1, 0, 1], format="csr"
        ).toarray()
        ritz = np.linalg.eigvalsh(T) if T.size else np.array([alphas[0]])
        lo, hi = float(ritz[0]), float(ritz[-1])
        if lo > 0:
            est = hi / lo
            extremes = (lo, hi)
            window.append(est)
            if len(window) > 8:
                window.pop(0)
            # Ritz extremes converge monotonically, so demand a flat window
            if (
                j >= 12
                and len(window) == 8
                and (max(window) - min(window)) <= 0.25 * tol * est
            ):
                stabilized = True
                prev = est
                break
            prev = est
        if beta <= 1e-14 * abs(alphas[0]):
            exact = True  # invariant subspace found: Ritz values exact
            break
        betas.append(beta)
        Qs.append(w / beta)
        AQs.append(aw / beta)

    if prev is None or not np.isfinite(prev) or extremes is None:
        raise NotConvergedError("spectral bound estimate did not stabilize")
    if not (stabilized or exact or jmax >= dim):
        raise NotConvergedError(
            f"spectral bound estimate hit the iteration cap ({jmax})", best=extremes
        )
    return extremes


def condition_number_estimate(
    apply_A,
    apply_Pinv,
    dim: int,
    tol: float = 0.02,
    max_iter: int = 400,
    seed: int = 0,
) -> float:
    """lambda_max / lambda_min of the preconditioned operator P^{-1} A."""
    lo, hi = spectral_bounds(apply_A, apply_Pinv, dim, tol=tol, max_iter=max_iter, seed=seed)
    return hi / lo
