"""Quasi-interpolation onto the coarse space, prolongation, and the kernel basis.

``Pi`` averages, over the coarse cells around each interior coarse vertex,
the vertex value of the cell-wise L2 projection onto Q1.  On a uniform mesh
the cell-wise projection is the same linear map on every cell, so it is
computed once on a reference cell by exact integration of fine-level
bilinear products.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LOCAL_MASS_UNIT
from .grid import GridPair

__all__ = [
    "InterpOperators",
    "build_interp",
    "build_pi",
    "build_prolongation",
    "build_kernel_basis",
    "prolong",
    "local_projection_weights",
    "measure_c_dagger",
]


def _prolongation_1d(grid: GridPair) -> sp.csr_matrix:
    nf, N, R = grid.fine_cells_per_side, grid.N, grid.R
    xf = np.arange(1, nf) / R
    xc = np.arange(1, N)
    w = np.maximum(0.0, 1.0 - np.abs(xf[:, None] - xc[None, :]))
    return sp.csr_matrix(w)


def build_prolongation(grid: GridPair) -> sp.csr_matrix:
    """n x m nodal interpolation of coarse bilinear functions onto the fine mesh."""
    P1 = _prolongation_1d(grid)
    P = sp.kron(P1, P1, format="csr")
    P.eliminate_zeros()
    return P


def local_projection_weights(R: int) -> np.ndarray:
    """(4, (R+1)^2) map from fine nodal values on one coarse cell to the
    vertex values of their L2 projection onto Q1 of that cell."""
    s = R + 1
    t = np.arange(s) / R
    lx, ly = np.meshgrid(t, t)
    lx, ly = lx.ravel(), ly.ravel()
    vx = np.array([0.0, 1.0, 1.0, 0.0])
    vy = np.array([0.0, 0.0, 1.0, 1.0])
    # coarse vertex basis sampled at the fine nodes: exact, it is fine-bilinear
    PT = ((1 - vx) + (2 * vx - 1) * lx[:, None]) * ((1 - vy) + (2 * vy - 1) * ly[:, None])

    ex, ey = np.meshgrid(np.arange(R), np.arange(R))
    ll = (ey * s + ex).ravel()
    conn = np.stack([ll, ll + 1, ll + 1 + s, ll + s], axis=1)
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    vals = np.tile(LOCAL_MASS_UNIT.ravel(), R * R)
    Mf = sp.coo_matrix((vals, (rows, cols)), shape=(s * s, s * s)).toarray()

    B = PT.T @ Mf
    MT = B @ PT
    return np.linalg.solve(MT, B)


def build_pi(grid: GridPair) -> sp.csr_matrix:
    """m x n matrix of the quasi-interpolation operator restricted to V_h."""
    N, R = grid.N, grid.R
    s = R + 1
    W = local_projection_weights(R)

    tx, ty = np.meshgrid(np.arange(N), np.arange(N))
    tx, ty = tx.ravel(), ty.ravel()
    lx, ly = np.meshgrid(np.arange(s), np.arange(s))
    lx, ly = lx.ravel(), ly.ravel()
    nfs = grid.fine_cells_per_side + 1
    fine_full = (ty[:, None] * R + ly[None, :]) * nfs + tx[:, None] * R + lx[None, :]
    cols = grid.fine_interior_map[fine_full]  # (N^2, s^2)

    vx = np.array([0, 1, 1, 0])
    vy = np.array([0, 0, 1, 1])
    coarse_full = (ty[:, None] + vy[None, :]) * (N + 1) + tx[:, None] + vx[None, :]
    rows = grid.coarse_interior_map[coarse_full]  # (N^2, 4)

    R_ = np.broadcast_to(rows[:, :, None], (N * N, 4, s * s))
    C_ = np.broadcast_to(cols[:, None, :], (N * N, 4, s * s))
    # every interior coarse vertex of a square mesh has exactly 4 cells
    V_ = np.broadcast_to(W[None, :, :] / 4.0, (N * N, 4, s * s))
    keep = (R_ >= 0) & (C_ >= 0)
    Pi = sp.coo_matrix((V_[keep], (R_[keep], C_[keep])), shape=(grid.m, grid.n)).tocsr()
    Pi.sum_duplicates()
    Pi.eliminate_zeros()
    return Pi


def prolong(P, w: np.ndarray) -> np.ndarray:
    if w.shape[0] != P.shape[1]:
        raise ValueError(f"coarse vector of length {w.shape[0]}, expected {P.shape[1]}")
    return P @ w


@dataclass(frozen=True, eq=False)
class InterpOperators:
    """``Pi`` (m x n), ``P`` (n x m) and the kernel basis in factored form.

    Kernel column ``j`` belongs to fine node ``kernel_nodes[j]`` and equals
    ``e_q - P Pi e_q``; ``Z = E - P (Pi E)`` with ``E`` the column selection.
    """

    grid: GridPair
    Pi: sp.csr_matrix
    P: sp.csr_matrix
    kernel_nodes: np.ndarray

    @property
    def ell(self) -> int:
        return self.kernel_nodes.size

    @cached_property
    def fine_to_kernel(self) -> np.ndarray:
        out = -np.ones(self.grid.n, dtype=np.int64)
        out[self.kernel_nodes] = np.arange(self.ell)
        return out

    @cached_property
    def PiE(self) -> sp.csr_matrix:
        return self.Pi[:, self.kernel_nodes].tocsr()

    @cached_property
    def E(self) -> sp.csr_matrix:
        n, ell = self.grid.n, self.ell
        return sp.csr_matrix((np.ones(ell), (self.kernel_nodes, np.arange(ell))), shape=(n, ell))

    @cached_property
    def Z(self) -> sp.csr_matrix:
        """Explicit n x ell kernel basis (memory heavy for large R)."""
        Z = (self.E - self.P @ self.PiE).tocsr()
        Z.eliminate_zeros()
        return Z

    def columns(self, idx) -> sp.csc_matrix:
        """Selected kernel columns ``Z[:, idx]`` without forming all of Z."""
        idx = np.asarray(idx)
        Eg = sp.csc_matrix(
            (np.ones(idx.size), (self.kernel_nodes[idx], np.arange(idx.size))),
            shape=(self.grid.n, idx.size),
        )
        return (Eg - self.P @ self.PiE[:, idx]).tocsc()

    def to_fine(self, c: np.ndarray) -> np.ndarray:
        """Fine coordinates ``Z c`` of kernel coefficients (vector or columns)."""
        out = -(self.P @ (self.PiE @ c))
        out[self.kernel_nodes] += c
        return out

    def to_kernel_dual(self, x: np.ndarray) -> np.ndarray:
        """``Z^T x`` for a fine dual vector (or columns)."""
        return x[self.kernel_nodes] - self.PiE.T @ (self.P.T @ x)


def build_kernel_basis(grid: GridPair, Pi, P=None) -> tuple[sp.csr_matrix, np.ndarray]:
    """Explicit kernel basis ``Z`` and the fine node owning each column."""
    if P is None:
        P = build_prolongation(grid)
    ops = InterpOperators(grid, Pi, P, _kernel_nodes(grid))
    return ops.Z, ops.kernel_nodes


def _kernel_nodes(grid: GridPair) -> np.ndarray:
    mask = np.ones(grid.n, dtype=bool)
    mask[grid.coarse_to_fine] = False
    return np.flatnonzero(mask)


def build_interp(grid: GridPair) -> InterpOperators:
    return InterpOperators(grid, build_pi(grid), build_prolongation(grid), _kernel_nodes(grid))


def measure_c_dagger(interp: InterpOperators, A_unit, M) -> dict:
    """Suprema over V_h of ``H^-1 ||v - Pi v||_L2 / |v|_H1`` and ``|Pi v|_H1 / |v|_H1``.

    Both are largest generalized eigenvalues against the unit-coefficient
    stiffness, so the measurement is deterministic.  ``c_dagger`` is the max.
    """
    H = interp.grid.H
    PPi = (interp.P @ interp.Pi).tocsr()

    def _l2_defect(v):
        Md = M @ (v - PPi @ v)
        return (Md - PPi.T @ Md) / H**2

    def _h1_image(v):
        return PPi.T @ (A_unit @ (PPi @ v))

    out = {}
    n = interp.grid.n
    for key, fn in (("l2_ratio", _l2_defect), ("h1_ratio", _h1_image)):
        op = spla.LinearOperator((n, n), matvec=fn, dtype=float)
        if n <= 600:
            K = np.column_stack([fn(e) for e in np.eye(n)])
            lam = float(sla.eigh(0.5 * (K + K.T), A_unit.toarray(), eigvals_only=True)[-1])
        else:
            lam = float(spla.eigsh(op, k=1, M=A_unit.tocsc(), which="LA", tol=1e-8)[0][0])
        out[key] = float(np.sqrt(max(lam, 0.0)))
    out["c_dagger"] = max(out["l2_ratio"], out["h1_ratio"])
    return out
