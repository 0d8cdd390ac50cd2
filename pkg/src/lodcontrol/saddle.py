"""Operators on kernel coordinates: A_K, M_K, the saddle block operator, and
the additive Schwarz preconditioner with its spectral diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import GridPair, patch
from .interp import InterpOperators
from .linalg import LanczosResult, SingularMatrixError, lanczos

__all__ = [
    "C_PF_UNIT_SQUARE",
    "KernelOperators",
    "build_kernel_operators",
    "ASPreconditioner",
    "BlockPreconditioner",
    "build_as_preconditioner",
    "apply_block_precond",
    "SpectralDiagnostics",
    "spectral_diagnostics",
    "saddle_ritz",
    "q_from_kappa",
    "write_spectrum_csv",
    "SPECTRUM_COLUMNS",
]

# 1 / (first Dirichlet eigenvalue of the Laplacian on the unit square)
C_PF_UNIT_SQUARE = 1.0 / (2.0 * np.pi**2)

DENSE_PATCH_LIMIT = 2000


class _Op(spla.LinearOperator):
    def __init__(self, n, matmat):
        self._mm = matmat
        super().__init__(dtype=np.float64, shape=(n, n))

    def _matvec(self, x):
        return self._mm(np.asarray(x).reshape(-1, 1))[:, 0]

    def _matmat(self, X):
        return self._mm(np.asarray(X))

    def _adjoint(self):
        return self


@dataclass(frozen=True, eq=False)
class KernelOperators:
    """``A_K = Z^T A Z`` and ``M_K = Z^T M Z`` applied through the factored basis."""

    A: sp.csr_matrix
    M: sp.csr_matrix
    interp: InterpOperators

    @property
    def ell(self) -> int:
        return self.interp.ell

    def apply_A(self, c):
        I = self.interp
        return I.to_kernel_dual(self.A @ I.to_fine(c))

    def apply_M(self, c):
        I = self.interp
        return I.to_kernel_dual(self.M @ I.to_fine(c))

    def apply_block(self, v):
        """``[[A_K, M_K], [M_K, -A_K]] v`` for a stacked kernel pair (or columns)."""
        I = self.interp
        ell = self.ell
        zu, zv = I.to_fine(v[:ell]), I.to_fine(v[ell:])
        top = I.to_kernel_dual(self.A @ zu + self.M @ zv)
        bot = I.to_kernel_dual(self.M @ zu - self.A @ zv)
        return np.concatenate([top, bot], axis=0)

    @cached_property
    def A_op(self) -> spla.LinearOperator:
        return _Op(self.ell, self.apply_A)

    @cached_property
    def M_op(self) -> spla.LinearOperator:
        return _Op(self.ell, self.apply_M)

    @cached_property
    def block(self) -> spla.LinearOperator:
        return _Op(2 * self.ell, self.apply_block)

    @cached_property
    def A_K(self) -> sp.csr_matrix:
        """Explicit triple product (dense-ish for large refinement factors)."""
        Z = self.interp.Z
        return (Z.T @ self.A @ Z).tocsr()

    @cached_property
    def M_K(self) -> sp.csr_matrix:
        Z = self.interp.Z
        return (Z.T @ self.M @ Z).tocsr()


def build_kernel_operators(A, M, interp: InterpOperators) -> KernelOperators:
    if A.shape != M.shape or A.shape[0] != interp.P.shape[0]:
        raise ValueError("operator dimensions do not match the interpolation data")
    return KernelOperators(A, M, interp)


class ASPreconditioner(spla.LinearOperator):
    """``S r = sum_i R_i^T A_i^{-1} R_i r`` over the node patches.

    All interior node patches of a uniform square mesh have the same number
    of local dofs, so the local inverses are held as one ``(m, k, k)`` stack
    and applied with batched products; the scatter back is a fixed sparse
    matrix, so the summation order does not depend on scheduling.
    """

    def __init__(self, index_sets: np.ndarray, local_solvers, dim: int):
        self.index_sets = np.asarray(index_sets)
        self.local = local_solvers
        self._dense = isinstance(local_solvers, np.ndarray)
        m, k = self.index_sets.shape
        self._scatter = sp.csr_matrix(
            (np.ones(m * k), (self.index_sets.ravel(), np.arange(m * k))), shape=(dim, m * k)
        )
        super().__init__(dtype=np.float64, shape=(dim, dim))

    @property
    def n_patches(self) -> int:
        return self.index_sets.shape[0]

    def _matmat(self, X):
        X = np.asarray(X)
        m, k = self.index_sets.shape
        G = X[self.index_sets]  # (m, k, ncol)
        if self._dense:
            Y = np.matmul(self.local, G)
        else:
            Y = np.stack([lu.solve(G[i]) for i, lu in enumerate(self.local)])
        return self._scatter @ Y.reshape(m * k, -1)

    def _matvec(self, x):
        return self._matmat(np.asarray(x).reshape(-1, 1))[:, 0]

    def _adjoint(self):
        return self


class BlockPreconditioner(spla.LinearOperator):
    """``diag(S, S)`` on stacked kernel pairs."""

    def __init__(self, S: ASPreconditioner):
        self.S = S
        n = S.shape[0]
        super().__init__(dtype=np.float64, shape=(2 * n, 2 * n))

    def _matmat(self, X):
        X = np.asarray(X)
        n = self.S.shape[0]
        k = X.shape[1]
        Y = self.S @ np.concatenate([X[:n], X[n:]], axis=1)
        return np.concatenate([Y[:, :k], Y[:, k:]], axis=0)

    def _matvec(self, x):
        return self._matmat(np.asarray(x).reshape(-1, 1))[:, 0]

    def _adjoint(self):
        return self


def apply_block_precond(S: ASPreconditioner, r: np.ndarray) -> np.ndarray:
    if r.shape[0] != 2 * S.shape[0]:
        raise ValueError(f"pair of length {r.shape[0]}, expected {2 * S.shape[0]}")
    return BlockPreconditioner(S) @ r


def build_as_preconditioner(grid: GridPair, interp: InterpOperators, kops: KernelOperators) -> ASPreconditioner:
    """Factor the local problems ``A_i = Z_i^T A Z_i`` once, one per coarse node."""
    sets = []
    for i in range(grid.m):
        local = interp.fine_to_kernel[patch(grid, i).local_kernel_indices]
        if np.any(local < 0):
            raise ValueError(f"patch {i} contains a coarse node")
        sets.append(local)
    sets = np.array(sets)
    k = sets.shape[1]
    dense = k <= DENSE_PATCH_LIMIT
    solvers = np.empty((grid.m, k, k)) if dense else []
    eye = np.eye(k)
    for i in range(grid.m):
        Zi = interp.columns(sets[i]).tocsr()
        AZi = (kops.A @ Zi).tocsr()
        if dense:
            # Z_i^T A Z_i only sees the rows where Z_i is nonzero; a dense
            # product over those rows is far cheaper than sparse*sparse
            rows = np.unique(Zi.nonzero()[0])
            Ai = Zi[rows].toarray().T @ AZi[rows].toarray()
            Ai = 0.5 * (Ai + Ai.T)
            try:
                c = sla.cho_factor(Ai, lower=True)
            except np.linalg.LinAlgError as err:
                raise SingularMatrixError(f"local problem of coarse node {i} is not SPD") from err
            inv = sla.cho_solve(c, eye)
            solvers[i] = 0.5 * (inv + inv.T)
        else:
            try:
                solvers.append(spla.splu((Zi.T @ AZi).tocsc()))
            except RuntimeError as err:
                raise SingularMatrixError(f"local problem of coarse node {i} is singular") from err
    return ASPreconditioner(sets, solvers, interp.ell)


def q_from_kappa(kappa: float, C_PF: float, alpha: float) -> float:
    t = kappa * (1.0 + C_PF / alpha)
    return (t - 1.0) / (t + 1.0)


@dataclass(frozen=True)
class SpectralDiagnostics:
    lambda_min: float
    lambda_max: float
    kappa: float
    c_star: float
    d_star: float
    q: float
    C_PF: float
    alpha: float
    beta: float | None = None
    converged: bool = True
    lanczos_steps: int = 0


def spectral_diagnostics(kops: KernelOperators, S, C_PF: float = C_PF_UNIT_SQUARE, alpha: float = 1.0,
                         beta: float | None = None, iters: int = 150, seed: int = 0) -> SpectralDiagnostics:
    """Extreme eigenvalues of ``S A_K`` and the derived constants c*, d*, q."""
    if C_PF <= 0 or alpha <= 0:
        raise ValueError("C_PF and alpha must be positive")
    res = lanczos(kops.A_op, S, iters, seed=seed)
    lmin, lmax = res.lambda_min, res.lambda_max
    c_star = lmin
    d_star = lmax * (1.0 + C_PF / alpha)
    q = (d_star - c_star) / (d_star + c_star)
    return SpectralDiagnostics(lmin, lmax, lmax / lmin, c_star, d_star, q, C_PF, alpha, beta,
                               res.converged, res.steps)


def saddle_ritz(kops: KernelOperators, S, iters: int = 150, seed: int = 0) -> LanczosResult:
    """Ritz values of the squared preconditioned saddle operator (``S_b B_K``)^2."""
    return lanczos(kops.block, BlockPreconditioner(S), iters, squared=True, seed=seed)


SPECTRUM_COLUMNS = ["lambda_min", "lambda_max", "kappa", "c_star", "d_star", "q", "C_PF", "alpha", "beta", "N", "R"]


def write_spectrum_csv(path, rows) -> None:
    """``rows``: iterable of (SpectralDiagnostics, N, R)."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPECTRUM_COLUMNS)
        for d, N, R in rows:
            w.writerow([repr(float(v)) for v in (d.lambda_min, d.lambda_max, d.kappa, d.c_star,
                                                  d.d_star, d.q, d.C_PF, d.alpha,
                                                  d.beta if d.beta is not None else float("nan"))]
                       + [N, R])
