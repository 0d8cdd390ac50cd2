"""Nested uniform quadrilateral meshes of the unit square.

Node numbering is lexicographic by (row, column): the node at column ``ix``
and row ``iy`` of an ``(s+1) x (s+1)`` lattice has full index
``iy * (s + 1) + ix``.  Interior nodes are numbered the same way over the
``(s-1) x (s-1)`` interior block, so ``(ix, iy) -> (iy - 1) * (s - 1) + ix - 1``.
Elements are numbered ``ey * s + ex`` with local vertices ordered
counter-clockwise starting at the lower-left corner.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = ["GridPair", "Patch", "build_nested", "patch", "layer_distance"]


def _element_nodes(cells: int) -> np.ndarray:
    """(cells**2, 4) full-lattice node indices of every element, CCW."""
    ex, ey = np.meshgrid(np.arange(cells), np.arange(cells))
    ex, ey = ex.ravel(), ey.ravel()
    s = cells + 1
    ll = ey * s + ex
    return np.stack([ll, ll + 1, ll + 1 + s, ll + s], axis=1)


def _interior_map(cells: int) -> np.ndarray:
    """Full-lattice index -> interior index, -1 on the boundary."""
    s = cells + 1
    out = -np.ones(s * s, dtype=np.int64)
    i = np.arange(1, cells)
    ix, iy = np.meshgrid(i, i)
    out[(iy * s + ix).ravel()] = np.arange((cells - 1) ** 2)
    return out


@dataclass(frozen=True, eq=False)
class GridPair:
    """Coarse mesh with ``N x N`` cells and its ``R``-fold uniform refinement."""

    coarse_cells_per_side: int
    refine_factor: int

    @property
    def N(self) -> int:
        return self.coarse_cells_per_side

    @property
    def R(self) -> int:
        return self.refine_factor

    @property
    def fine_cells_per_side(self) -> int:
        return self.N * self.R

    @property
    def H(self) -> float:
        return 1.0 / self.N

    @property
    def h(self) -> float:
        return 1.0 / self.fine_cells_per_side

    @property
    def n(self) -> int:
        return (self.fine_cells_per_side - 1) ** 2

    @property
    def m(self) -> int:
        return (self.N - 1) ** 2

    @cached_property
    def fine_elements(self) -> np.ndarray:
        return _element_nodes(self.fine_cells_per_side)

    @cached_property
    def coarse_elements(self) -> np.ndarray:
        return _element_nodes(self.N)

    @cached_property
    def fine_interior_map(self) -> np.ndarray:
        return _interior_map(self.fine_cells_per_side)

    @cached_property
    def coarse_interior_map(self) -> np.ndarray:
        return _interior_map(self.N)

    @cached_property
    def fine_interior_nodes(self) -> np.ndarray:
        """Full-lattice indices of the fine interior nodes, in interior order."""
        return np.flatnonzero(self.fine_interior_map >= 0)

    @cached_property
    def coarse_interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.coarse_interior_map >= 0)

    @cached_property
    def fine_node_positions(self) -> np.ndarray:
        """(n, 2) coordinates of the fine interior nodes."""
        return self._positions(self.fine_cells_per_side)

    @cached_property
    def coarse_node_positions(self) -> np.ndarray:
        """(m, 2) coordinates of the coarse interior nodes."""
        return self._positions(self.N)

    @staticmethod
    def _positions(cells: int) -> np.ndarray:
        t = np.arange(1, cells) / cells
        x, y = np.meshgrid(t, t)
        return np.column_stack([x.ravel(), y.ravel()])

    @cached_property
    def coarse_to_fine(self) -> np.ndarray:
        """Fine interior index of the node coinciding with each coarse interior node."""
        c = np.arange(1, self.N) * self.R
        fx, fy = np.meshgrid(c, c)
        s = self.fine_cells_per_side + 1
        return self.fine_interior_map[(fy * s + fx).ravel()]

    @cached_property
    def fine_element_parent(self) -> np.ndarray:
        """Coarse element containing each fine element."""
        nf = self.fine_cells_per_side
        e = np.arange(nf * nf)
        ex, ey = e % nf, e // nf
        return (ey // self.R) * self.N + ex // self.R

    def coarse_node_ij(self, i: int) -> tuple[int, int]:
        """Lattice column/row of coarse interior node ``i``."""
        if not 0 <= i < self.m:
            raise IndexError(f"coarse node {i} out of range [0, {self.m})")
        return i % (self.N - 1) + 1, i // (self.N - 1) + 1


def build_nested(N: int, R: int) -> GridPair:
    """Build the coarse/fine mesh pair with ``H = 1/N`` and ``h = 1/(N R)``."""
    if int(N) != N or int(R) != R:
        raise ValueError("N and R must be integers")
    if N < 2:
        raise ValueError(f"N={N}: need N >= 2 for an interior coarse node")
    if R < 2:
        raise ValueError(f"R={R}: need R >= 2 for a proper refinement")
    return GridPair(int(N), int(R))


@dataclass(frozen=True, eq=False)
class Patch:
    center: int
    omega: np.ndarray
    omega_tilde: np.ndarray
    local_kernel_indices: np.ndarray = field(repr=False)


def _cells_in_box(grid: GridPair, x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, grid.N - 1), min(y1, grid.N - 1)
    cx, cy = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    return np.sort((cy * grid.N + cx).ravel())


def patch(grid: GridPair, i: int) -> Patch:
    """Node patch ``omega`` (cells touching x_i), its one-layer extension, and
    the fine interior nodes of ``omega`` other than x_i."""
    cx, cy = grid.coarse_node_ij(i)
    omega = _cells_in_box(grid, cx - 1, cx, cy - 1, cy)
    omega_tilde = _cells_in_box(grid, cx - 2, cx + 1, cy - 2, cy + 1)

    R = grid.R
    s = grid.fine_cells_per_side + 1
    t = np.arange(-R + 1, R)
    fx, fy = np.meshgrid(cx * R + t, cy * R + t)
    full = (fy * s + fx).ravel()
    full = full[full != cy * R * s + cx * R]
    local = np.sort(grid.fine_interior_map[full])
    return Patch(i, omega, omega_tilde, local)


def _cell_layers(grid: GridPair, i: int) -> np.ndarray:
    """Chebyshev layer of every coarse cell relative to node ``i``."""
    cx, cy = grid.coarse_node_ij(i)
    c = np.arange(grid.N)
    dx = np.where(c >= cx, c - cx, cx - 1 - c)
    dy = np.where(c >= cy, c - cy, cy - 1 - c)
    return np.maximum(dy[:, None], dx[None, :]).ravel()


def layer_distance(grid: GridPair, i: int, e) -> np.ndarray | int:
    """Coarse layers between node ``i`` and the coarse cell holding fine element(s) ``e``.

    Cells touching x_i are layer 0; ``e`` may be an int or an index array.
    """
    layers = _cell_layers(grid, i)[grid.fine_element_parent[e]]
    return int(layers) if np.ndim(layers) == 0 else layers
