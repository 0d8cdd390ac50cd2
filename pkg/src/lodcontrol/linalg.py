"""Preconditioned MINRES, Lanczos extreme-eigenvalue estimates, dense symmetric solves.

Operators are anything supporting ``op @ x`` for vectors and column blocks
(ndarrays, scipy sparse matrices, :class:`scipy.sparse.linalg.LinearOperator`).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import eigvalsh_tridiagonal

__all__ = [
    "MinresReport",
    "ConvergenceError",
    "SingularMatrixError",
    "pminres",
    "LanczosResult",
    "lanczos",
    "lanczos_extremes",
    "SymmetricFactorization",
    "dense_solve_symmetric",
    "is_symmetric",
]

BREAKDOWN_TOL = 1e-14


class ConvergenceError(RuntimeError):
    """An iteration stopped without meeting its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass
class MinresReport:
    """Residual history of a P-MINRES run.

    ``residuals[j]`` is the preconditioned residual norm ``<r_j, S r_j>^(1/2)``
    after ``j`` steps (row ``j`` per column for block right-hand sides).
    """

    steps_requested: int | None
    steps: int
    residuals: np.ndarray
    converged: np.ndarray | bool
    breakdown: np.ndarray | bool
    solution: np.ndarray = field(repr=False, default=None)

    @property
    def initial(self):
        return self.residuals[0]

    @property
    def final(self):
        return self.residuals[-1]


def _apply(op, x):
    return x.copy() if op is None else op @ x


def pminres(op, rhs, precond=None, *, steps=None, tol=None, maxiter=None):
    """Preconditioned MINRES with zero initial guess.

    Exactly one of ``steps`` (take exactly that many iterations) or ``tol``
    (stop once every column's preconditioned residual is below ``tol`` times
    its initial value, at most ``maxiter`` iterations) must be given.
    ``rhs`` may be a vector or an ``(n, k)`` block of independent right-hand
    sides; the recurrences run column-wise.  A column whose Lanczos process
    breaks down has reached its exact solution and is frozen.

    Returns ``(x, MinresReport)``.
    """
    if (steps is None) == (tol is None):
        raise ValueError("give exactly one of steps= or tol=")
    if steps is not None and steps < 0:
        raise ValueError("steps must be >= 0")
    if tol is not None and maxiter is None:
        maxiter = 4 * rhs.shape[0]
    nsteps = steps if steps is not None else maxiter

    b = np.asarray(rhs, dtype=float)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    n, k = b.shape

    x = np.zeros_like(b)
    r1 = b.copy()
    y = _apply(precond, r1)
    beta1 = np.sqrt(np.maximum(np.einsum("ij,ij->j", r1, y), 0.0))
    active = beta1 > 0
    broke = ~active
    converged = ~active

    r2 = r1.copy()
    beta = beta1.copy()
    oldb = np.zeros(k)
    dbar = np.zeros(k)
    epsln = np.zeros(k)
    phibar = beta1.copy()
    cs = -np.ones(k)
    sn = np.zeros(k)
    tnorm = np.zeros(k)
    w = np.zeros_like(b)
    w2 = np.zeros_like(b)
    history = [phibar.copy()]

    it = 0
    while it < nsteps:
        if tol is not None and np.all(converged | broke):
            break
        it += 1
        safe_beta = np.where(active, beta, 1.0)
        v = y / safe_beta
        v[:, ~active] = 0.0
        y = op @ v
        if it >= 2:
            y = y - (np.where(active, beta, 0.0) / np.where(oldb > 0, oldb, 1.0)) * r1
        alfa = np.einsum("ij,ij->j", v, y)
        y = y - (alfa / safe_beta) * r2
        r1 = r2
        r2 = y
        y = _apply(precond, r2)
        oldb = np.where(active, beta, oldb)
        beta_new = np.sqrt(np.maximum(np.einsum("ij,ij->j", r2, y), 0.0))
        tnorm = np.maximum(tnorm, np.sqrt(alfa**2 + beta_new**2 + oldb**2))
        # invariant Krylov space: this step lands on the exact solution
        hit = active & (beta_new <= BREAKDOWN_TOL * np.maximum(tnorm, 1e-300))
        beta_new = np.where(hit, 0.0, beta_new)
        beta = np.where(active, beta_new, beta)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.sqrt(gbar**2 + beta**2)
        gamma = np.maximum(gamma, np.finfo(float).eps)
        cs_new = gbar / gamma
        sn_new = np.minimum(beta / gamma, 1.0)
        phi = cs_new * phibar
        phibar_new = np.abs(sn_new) * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        phi = np.where(active, phi, 0.0)
        x = x + phi * w

        cs = np.where(active, cs_new, cs)
        sn = np.where(active, sn_new, sn)
        phibar = np.where(active, phibar_new, phibar)
        phibar = np.where(hit, 0.0, phibar)
        history.append(phibar.copy())

        broke = broke | hit
        active = active & ~hit
        if tol is not None:
            converged = converged | (phibar <= tol * beta1)

    if tol is None:
        converged = broke | (phibar <= 0.0)
    res = np.array(history)
    if vector:
        x = x[:, 0]
        res = res[:, 0]
        converged = bool(converged[0])
        broke = bool(broke[0])
    report = MinresReport(steps, it, res, converged, broke, x)
    return x, report


@dataclass
class LanczosResult:
    """Ritz values of the preconditioned operator (squared operator if ``squared``)."""

    ritz: np.ndarray
    lambda_min: float
    lambda_max: float
    steps: int
    converged: bool
    squared: bool


def lanczos(op, precond=None, iters=100, *, squared=False, seed=0, dim=None) -> LanczosResult:
    """Preconditioned Lanczos with full reorthogonalization.

    Approximates the spectrum of ``precond @ op`` in the inner product induced
    by ``precond^-1``.  With ``squared=True`` the iteration runs on
    ``op @ precond @ op``, so the Ritz values approximate the eigenvalues of
    ``(precond @ op)^2`` (used for symmetric indefinite ``op``).

    ``converged`` is False when an extreme Ritz value still moved by more
    than 1% over the last quarter of the iterations.
    """
    if dim is None:
        dim = op.shape[0]
    iters = int(min(iters, dim))
    rng = np.random.default_rng(seed)

    def apply_op(q):
        if squared:
            return op @ _apply(precond, op @ q)
        return op @ q

    r = rng.standard_normal(dim)
    z = _apply(precond, r)
    nrm = np.sqrt(r @ z)
    Q = np.zeros((dim, iters))  # primal, precond^-1 orthonormal
    Pd = np.zeros((dim, iters))  # dual images precond^-1 Q
    alphas, betas = [], []
    lo_hist, hi_hist = [], []
    Q[:, 0] = z / nrm
    Pd[:, 0] = r / nrm
    steps = 0
    breakdown = False
    for j in range(iters):
        u = apply_op(Q[:, j])
        a = Q[:, j] @ u
        alphas.append(a)
        u = u - a * Pd[:, j]
        if j > 0:
            u = u - betas[-1] * Pd[:, j - 1]
        # two passes of full reorthogonalization against all previous vectors
        for _ in range(2):
            c = Q[:, : j + 1].T @ u
            u = u - Pd[:, : j + 1] @ c
        z = _apply(precond, u)
        b = np.sqrt(max(u @ z, 0.0))
        steps = j + 1
        ritz = _ritz(alphas, betas)
        lo_hist.append(ritz[0])
        hi_hist.append(ritz[-1])
        scale = max(abs(ritz[0]), abs(ritz[-1]), 1e-300)
        if b <= BREAKDOWN_TOL * scale * 10 or j + 1 == iters:
            breakdown = b <= BREAKDOWN_TOL * scale * 10
            break
        betas.append(b)
        Q[:, j + 1] = z / b
        Pd[:, j + 1] = u / b

    ritz = _ritz(alphas, betas[: len(alphas) - 1])
    converged = True
    if not breakdown and steps < dim and steps >= 4:
        q0 = steps - max(1, steps // 4) - 1
        for hist in (lo_hist, hi_hist):
            ref = hist[-1]
            if abs(hist[q0] - ref) > 0.01 * abs(ref):
                converged = False
    return LanczosResult(ritz, float(ritz[0]), float(ritz[-1]), steps, converged, squared)


def _ritz(alphas, betas):
    a = np.asarray(alphas)
    b = np.asarray(betas[: a.size - 1])
    if a.size == 1:
        return a.copy()
    return eigvalsh_tridiagonal(a, b)


def lanczos_extremes(op, precond=None, iters=100, *, squared=False, seed=0):
    """``(lambda_min, lambda_max)`` of ``precond @ op``.

    With ``squared=True`` returns the extremes of ``|lambda|`` (square roots
    of the extreme Ritz values of the squared operator).
    """
    res = lanczos(op, precond, iters, squared=squared, seed=seed)
    if squared:
        return float(np.sqrt(max(res.lambda_min, 0.0))), float(np.sqrt(res.lambda_max))
    return res.lambda_min, res.lambda_max


class SymmetricFactorization:
    """LU with partial pivoting of a dense symmetric (possibly indefinite) matrix.

    Raises :class:`SingularMatrixError` when a pivot falls below
    ``1e-14 * max|a_ij|``.
    """

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("matrix must be square")
        self.shape = a.shape
        with warnings.catch_warnings():
            # exact zero pivots are reported below as SingularMatrixError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.lu, self.piv = sla.lu_factor(a, check_finite=True)
        pivots = np.abs(np.diag(self.lu))
        amax = np.abs(a).max() if a.size else 0.0
        if a.size and pivots.min() < 1e-14 * amax:
            j = int(np.argmin(pivots))
            raise SingularMatrixError(f"pivot {j} has magnitude {pivots[j]:.3e} (max entry {amax:.3e})")

    def solve(self, rhs):
        return sla.lu_solve((self.lu, self.piv), rhs)


def dense_solve_symmetric(matrix, rhs):
    return SymmetricFactorization(matrix).solve(rhs)


def is_symmetric(op, dim, *, trials=5, rtol=1e-12, seed=0) -> bool:
    """Randomized check of ``<Lx, y> = <Ly, x>``."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        x, y = rng.standard_normal(dim), rng.standard_normal(dim)
        lx, ly = op @ x, op @ y
        a, b = lx @ y, ly @ x
        if abs(a - b) > rtol * max(np.linalg.norm(lx) * np.linalg.norm(y), 1e-300):
            return False
    return True
