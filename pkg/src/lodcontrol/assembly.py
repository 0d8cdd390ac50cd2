"""Q1 finite element assembly on the fine mesh (homogeneous Dirichlet dofs removed)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .coeff import CoefficientField
from .grid import GridPair

__all__ = [
    "AssembledOperators",
    "assemble",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_load",
    "element_stiffness",
    "quadrature_points",
    "pair_norms",
    "split_pair",
    "export_coo",
    "LOCAL_STIFFNESS_UNIT",
    "LOCAL_MASS_UNIT",
]

# reference square [0,1]^2, vertices CCW from (0,0)
_VX = np.array([0.0, 1.0, 1.0, 0.0])
_VY = np.array([0.0, 0.0, 1.0, 1.0])
_G = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GX, _GY = np.meshgrid(_G, _G)
_GX, _GY = _GX.ravel(), _GY.ravel()  # 4 Gauss points, weight 1/4 each


def _shape(x, y):
    """Bilinear shape functions, (npts, 4)."""
    x, y = np.asarray(x)[:, None], np.asarray(y)[:, None]
    return (1 - x + (2 * x - 1) * _VX) * (1 - y + (2 * y - 1) * _VY)


def _shape_grad(x, y):
    x, y = np.asarray(x)[:, None], np.asarray(y)[:, None]
    sx = 2 * _VX - 1
    sy = 2 * _VY - 1
    return sx * ((1 - _VY) + sy * y), sy * ((1 - _VX) + sx * x)


_PHI = _shape(_GX, _GY)  # (4 gauss, 4 basis)
_DX, _DY = _shape_grad(_GX, _GY)
# per-Gauss-point gradient outer products, weight included; h cancels in 2D
_KX = 0.25 * np.einsum("ga,gb->gab", _DX, _DX)
_KY = 0.25 * np.einsum("ga,gb->gab", _DY, _DY)

LOCAL_STIFFNESS_UNIT = _KX.sum(0) + _KY.sum(0)
LOCAL_MASS_UNIT = 0.25 * np.einsum("ga,gb->ab", _PHI, _PHI)


def quadrature_points(grid: GridPair) -> np.ndarray:
    """(ne, 4, 2) physical Gauss points of every fine element."""
    nf = grid.fine_cells_per_side
    e = np.arange(nf * nf)
    x0 = (e % nf)[:, None] * grid.h
    y0 = (e // nf)[:, None] * grid.h
    return np.stack([x0 + _GX * grid.h, y0 + _GY * grid.h], axis=-1)


def element_stiffness(grid: GridPair, field: CoefficientField) -> np.ndarray:
    """(ne, 4, 4) local stiffness matrices with the coefficient at 2x2 Gauss points."""
    q = quadrature_points(grid)
    a11, a22 = field.evaluate(q[..., 0], q[..., 1])
    return np.einsum("eg,gab->eab", a11, _KX) + np.einsum("eg,gab->eab", a22, _KY)


def _assemble_local(grid: GridPair, local: np.ndarray) -> sp.csr_matrix:
    """Scatter (ne, 4, 4) or (4, 4) local matrices onto the interior dofs."""
    conn = grid.fine_interior_map[grid.fine_elements]
    ne = conn.shape[0]
    if local.ndim == 2:
        local = np.broadcast_to(local, (ne, 4, 4))
    rows = np.repeat(conn, 4, axis=1)
    cols = np.tile(conn, (1, 4))
    vals = local.reshape(ne, 16)
    keep = (rows >= 0) & (cols >= 0)
    n = grid.n
    # coo -> csr sums duplicates in stable element order
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def assemble_stiffness(grid: GridPair, field: CoefficientField) -> sp.csr_matrix:
    return _assemble_local(grid, element_stiffness(grid, field))


def assemble_mass(grid: GridPair) -> sp.csr_matrix:
    return _assemble_local(grid, LOCAL_MASS_UNIT * grid.h**2)


def assemble_load(grid: GridPair, y_d) -> np.ndarray:
    """``L_i = int y_d phi_i`` by 2x2 Gauss quadrature; ``y_d`` is a constant or ``f(x, y)``."""
    q = quadrature_points(grid)
    if callable(y_d):
        vals = np.asarray(y_d(q[..., 0], q[..., 1]), dtype=float)
        vals = np.broadcast_to(vals, q.shape[:2])
    else:
        vals = np.full(q.shape[:2], float(y_d))
    local = 0.25 * grid.h**2 * vals @ _PHI  # (ne, 4)
    conn = grid.fine_interior_map[grid.fine_elements]
    keep = conn >= 0
    return np.bincount(conn[keep], weights=local[keep], minlength=grid.n)


@dataclass(frozen=True, eq=False)
class AssembledOperators:
    A: sp.csr_matrix
    M: sp.csr_matrix
    grid: GridPair
    field: CoefficientField

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def block(self, gamma: float = 1.0) -> sp.csr_matrix:
        """Fine saddle operator ``[[A, M], [M, -gamma A]]``."""
        return sp.bmat([[self.A, self.M], [self.M, -gamma * self.A]], format="csr")


def assemble(grid: GridPair, field: CoefficientField) -> AssembledOperators:
    return AssembledOperators(assemble_stiffness(grid, field), assemble_mass(grid), grid, field)


def split_pair(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """View a stacked pair vector ``[p; y]`` as its two blocks."""
    if v.shape[0] % 2:
        raise ValueError("pair vector must have even length")
    k = v.shape[0] // 2
    return v[:k], v[k:]


def pair_norms(A, M, v: np.ndarray) -> tuple[float, float]:
    """Energy and L2 norms of the pair ``v = [p; y]``."""
    if v.shape[0] != 2 * A.shape[0]:
        raise ValueError(f"pair of length {v.shape[0]} does not match operator size {A.shape[0]}")
    p, y = split_pair(v)
    energy = p @ (A @ p) + y @ (A @ y)
    l2 = p @ (M @ p) + y @ (M @ y)
    return float(np.sqrt(max(energy, 0.0))), float(np.sqrt(max(l2, 0.0)))


def export_coo(matrix, path) -> None:
    """Write ``row col value`` lines (0-based) with a ``# rows cols nnz`` header."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
