"""Correctors, the corrected coarse basis, the reduced saddle system and decay profiles.

Kernel pairs are stacked ``[u; v]`` of length ``2 ell``; fine pairs are
``[p; y]`` of length ``2 n``.  The corrector of the first-slot coarse
function ``(phi_i, 0)`` solves ``B_K psi = f_i``; the second-slot corrector
is the rotation ``xi = (-psi_2, psi_1)`` and never needs its own solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .grid import GridPair, layer_distance
from .linalg import ConvergenceError, MinresReport, pminres
from .saddle import BlockPreconditioner, KernelOperators

__all__ = [
    "IDEAL_TOL",
    "Corrector",
    "CorrectorSet",
    "corrector_rhs",
    "compute_correctors",
    "compute_ideal_corrector",
    "compute_localized_corrector",
    "derive_xi",
    "MultiscaleBasis",
    "build_multiscale_basis",
    "assemble_reduced",
    "decay_profile",
    "support_layers",
    "support_layer_bound",
    "fine_pair",
]

IDEAL_TOL = 1e-10


def _rotate(v: np.ndarray) -> np.ndarray:
    h = v.shape[0] // 2
    return np.concatenate([-v[h:], v[:h]], axis=0)


def fine_pair(kops: KernelOperators, v: np.ndarray) -> np.ndarray:
    """Fine coordinates ``(Z v_1, Z v_2)`` of a kernel pair (or columns)."""
    ell = kops.ell
    I = kops.interp
    return np.concatenate([I.to_fine(v[:ell]), I.to_fine(v[ell:])], axis=0)


def corrector_rhs(i, kops: KernelOperators) -> np.ndarray:
    """``(Z^T A P e_i, Z^T M P e_i)`` for one node index or an index array (columns)."""
    I = kops.interp
    m = I.P.shape[1]
    idx = np.atleast_1d(np.asarray(i))
    if idx.size and (idx.min() < 0 or idx.max() >= m):
        raise IndexError(f"coarse node index out of range [0, {m})")
    Pe = I.P[:, idx].toarray()
    f = np.concatenate([I.to_kernel_dual(kops.A @ Pe), I.to_kernel_dual(kops.M @ Pe)], axis=0)
    return f[:, 0] if np.ndim(i) == 0 else f


@dataclass
class Corrector:
    node: int
    psi: np.ndarray = field(repr=False)
    k: int | str
    residual: float
    history: np.ndarray = field(repr=False, default=None)
    breakdown: bool = False
    rotated: bool = False

    @property
    def ideal(self) -> bool:
        return self.k == "ideal"


@dataclass
class CorrectorSet:
    """psi-correctors for every coarse node, stored as columns (2 ell, m)."""

    psi: np.ndarray = field(repr=False)
    k: int | str
    report: MinresReport | None = field(repr=False, default=None)
    nodes: np.ndarray | None = None

    @property
    def ideal(self) -> bool:
        return self.k == "ideal"

    def __len__(self):
        return self.psi.shape[1]

    def __getitem__(self, i) -> Corrector:
        rep = self.report
        hist = None if rep is None else rep.residuals[:, i]
        res = 0.0 if hist is None else float(hist[-1])
        brk = False if rep is None else bool(np.atleast_1d(rep.breakdown)[i])
        node = i if self.nodes is None else int(self.nodes[i])
        return Corrector(node, self.psi[:, i], self.k, res, hist, brk)


def compute_correctors(kops: KernelOperators, S, k: int | str = "ideal", nodes=None,
                       tol: float = IDEAL_TOL, max_steps: int | None = None) -> CorrectorSet:
    """All requested correctors in one column-blocked P-MINRES run.

    ``k="ideal"`` iterates to ``tol`` (at most ``max_steps``, default 4 ell);
    an integer ``k`` takes exactly ``k`` steps from zero.
    """
    m = kops.interp.P.shape[1]
    nodes = np.arange(m) if nodes is None else np.asarray(nodes)
    f = corrector_rhs(nodes, kops)
    Sb = BlockPreconditioner(S)
    if k == "ideal":
        steps_max = 4 * kops.ell if max_steps is None else max_steps
        psi, rep = pminres(kops.block, f, Sb, tol=tol, maxiter=steps_max)
        if not np.all(rep.converged):
            bad = nodes[~np.asarray(rep.converged)]
            raise ConvergenceError(f"ideal correctors for nodes {bad.tolist()} missed tol {tol:g}", rep.residuals)
    else:
        if int(k) < 0:
            raise ValueError("k must be >= 0")
        psi, rep = pminres(kops.block, f, Sb, steps=int(k))
    return CorrectorSet(psi, k, rep, nodes)


def compute_ideal_corrector(i: int, kops: KernelOperators, S, tol: float = IDEAL_TOL) -> Corrector:
    return compute_correctors(kops, S, "ideal", [i], tol=tol)[0]


def compute_localized_corrector(i: int, k: int, kops: KernelOperators, S) -> Corrector:
    return compute_correctors(kops, S, k, [i])[0]


def derive_xi(c: Corrector) -> Corrector:
    """Second-slot corrector by rotation ``(u, v) -> (-v, u)``."""
    return Corrector(c.node, _rotate(c.psi), c.k, c.residual, c.history, c.breakdown, not c.rotated)


@dataclass(eq=False)
class MultiscaleBasis:
    """Corrected basis as dense fine pair columns ``(2n, 2m)``.

    Column ``i`` is ``(phi_i, 0) - Z psi_i`` and column ``m + i`` is
    ``(0, phi_i) - Z xi_i``.
    """

    vectors: np.ndarray = field(repr=False)
    ideal: bool
    k: int | str

    @property
    def m(self) -> int:
        return self.vectors.shape[1] // 2

    def __len__(self):
        return self.vectors.shape[1]


def build_multiscale_basis(correctors: CorrectorSet, kops: KernelOperators) -> MultiscaleBasis:
    P = kops.interp.P
    n, m = P.shape
    if len(correctors) != m:
        raise ValueError(f"need one corrector per coarse node ({m}), got {len(correctors)}")
    psi = correctors.psi
    Zpsi = fine_pair(kops, psi)
    Zxi = fine_pair(kops, _rotate(psi))
    Pd = P.toarray()
    V = np.empty((2 * n, 2 * m))
    V[:n, :m] = Pd - Zpsi[:n]
    V[n:, :m] = -Zpsi[n:]
    V[:n, m:] = -Zxi[:n]
    V[n:, m:] = Pd - Zxi[n:]
    return MultiscaleBasis(V, correctors.ideal, correctors.k)


def _fine_block_apply(A, M, V, gamma=1.0):
    n = A.shape[0]
    p, y = V[:n], V[n:]
    return np.concatenate([A @ p + M @ y, M @ p - gamma * (A @ y)], axis=0)


def assemble_reduced(basis: MultiscaleBasis, A, M, load) -> tuple[np.ndarray, np.ndarray]:
    """Reduced matrix ``G[j, k] = B(b_k, b_j)`` and right-hand side ``rhs_j = <b_j^p, load>``.

    ``load`` may be a vector or an ``(n, r)`` block of loads.
    """
    V = basis.vectors
    n = A.shape[0]
    G = V.T @ _fine_block_apply(A, M, V)
    rhs = V[:n].T @ np.asarray(load)
    return G, rhs


def support_layers(grid: GridPair, i: int, fine_pair_vec: np.ndarray, tol: float = 0.0) -> int:
    """Largest coarse layer holding a fine element where the pair is nonzero (-1 if zero)."""
    n = grid.n
    full = np.zeros((2, (grid.fine_cells_per_side + 1) ** 2))
    full[:, grid.fine_interior_nodes] = np.abs(fine_pair_vec.reshape(2, n))
    mag = full.max(axis=0)[grid.fine_elements].max(axis=1)
    hit = np.flatnonzero(mag > tol)
    if hit.size == 0:
        return -1
    return int(layer_distance(grid, i, hit).max())


def support_layer_bound(k: int) -> int:
    """Layer radius outside which a k-step localized corrector vanishes.

    ``S f`` lives in the union of the patches ``omega~_j`` meeting the
    support of ``(phi_i, 0)`` (layers <= 3), and each further ``S B`` step
    adds the patches touching the current support: 3 more layers.
    """
    if k <= 0:
        return -1
    return 3 * k


def decay_profile(psi: np.ndarray, node: int, grid: GridPair, kops: KernelOperators, element_K: np.ndarray):
    """``[(layer, annulus_energy)]`` of a kernel pair around coarse node ``node``.

    ``element_K`` is the ``(ne, 4, 4)`` element stiffness stack; element
    energies are grouped by coarse layer distance, boundary dofs are zero.
    """
    w = fine_pair(kops, psi)
    n = grid.n
    full = np.zeros((2, (grid.fine_cells_per_side + 1) ** 2))
    full[:, grid.fine_interior_nodes] = w.reshape(2, n)
    loc = full[:, grid.fine_elements]  # (2, ne, 4)
    e = np.einsum("cea,eab,ceb->e", loc, element_K, loc)
    layers = layer_distance(grid, node, np.arange(grid.fine_elements.shape[0]))
    L = int(layers.max())
    sq = np.bincount(layers, weights=np.maximum(e, 0.0), minlength=L + 1)
    return [(l, float(np.sqrt(sq[l]))) for l in range(L + 1)]
