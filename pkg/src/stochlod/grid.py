"""Uniform Cartesian meshes on the unit square, element patches and index maps.

All index sets are lexicographic with x running fastest.  A coarse element
``(ix, iy)`` has index ``ix + n * iy``; a node ``(x, y)`` of an ``n x n`` cell
mesh has index ``x + (n + 1) * y``.  Interior nodes are numbered the same way
on the ``(n - 1) x (n - 1)`` block.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

DISCARD = -1


def _log2_int(value: int) -> int | None:
    if value < 1 or value & (value - 1):
        return None
    return value.bit_length() - 1


def _dyadic_count(H: float) -> int:
    n = int(round(1.0 / H))
    if n < 2 or _log2_int(n) is None or abs(n * H - 1.0) > 1e-12:
        raise ValueError(f"mesh size {H!r} is not of the form 2**-p with p >= 1")
    return n


@dataclass(frozen=True)
class CoarseGrid:
    n: int
    d: int = 2

    @property
    def H(self) -> float:
        return 1.0 / self.n

    @property
    def n_elements(self) -> int:
        return self.n ** self.d

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** self.d

    @property
    def n_interior(self) -> int:
        return (self.n - 1) ** self.d

    @property
    def elements(self) -> np.ndarray:
        return np.arange(self.n_elements)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        """Full-mesh indices of the nodes that carry degrees of freedom."""
        idx = np.arange(1, self.n)
        x, y = np.meshgrid(idx, idx, indexing="xy")
        return (x + (self.n + 1) * y).ravel()

    @cached_property
    def node_to_dof(self) -> np.ndarray:
        """Full-mesh node index -> interior DOF index, DISCARD on the boundary."""
        m = np.full(self.n_nodes, DISCARD, dtype=np.int64)
        m[self.interior_nodes] = np.arange(self.n_interior)
        return m

    def element_coords(self, T: int) -> tuple[int, int]:
        if not 0 <= T < self.n_elements:
            raise IndexError(f"element index {T} out of range [0, {self.n_elements})")
        return T % self.n, T // self.n

    def node_coordinates(self) -> np.ndarray:
        """(n_nodes, 2) array of node positions."""
        t = np.linspace(0.0, 1.0, self.n + 1)
        x, y = np.meshgrid(t, t, indexing="xy")
        return np.column_stack([x.ravel(), y.ravel()])


@dataclass(frozen=True)
class FineGrid:
    """Uniform refinement of ``parent`` by ``refinement`` cells per coarse cell and axis."""

    parent: CoarseGrid
    refinement: int

    def __post_init__(self):
        if _log2_int(self.refinement) is None:
            raise ValueError(f"refinement {self.refinement} is not a power of 2")

    @property
    def n(self) -> int:
        return self.parent.n * self.refinement

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_cells(self) -> int:
        return self.n ** 2

    @property
    def n_nodes(self) -> int:
        return (self.n + 1) ** 2

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        idx = np.arange(1, self.n)
        x, y = np.meshgrid(idx, idx, indexing="xy")
        return (x + (self.n + 1) * y).ravel()

    def midpoints(self) -> np.ndarray:
        """Cell midpoint coordinates along one axis."""
        return (np.arange(self.n) + 0.5) * self.h

    def node_coordinates(self) -> np.ndarray:
        t = np.linspace(0.0, 1.0, self.n + 1)
        x, y = np.meshgrid(t, t, indexing="xy")
        return np.column_stack([x.ravel(), y.ravel()])


def build_coarse_grid(H: float, d: int = 2) -> CoarseGrid:
    if d != 2:
        raise ValueError(f"unsupported dimension d={d}")
    return CoarseGrid(_dyadic_count(H), d)


def build_fine_grid(coarse: CoarseGrid, h: float) -> FineGrid:
    """Fine grid of mesh size ``h`` refining ``coarse``."""
    ratio = coarse.H / h
    r = int(round(ratio))
    if r < 1 or abs(r - ratio) > 1e-9:
        raise ValueError(f"h={h!r} does not refine H={coarse.H!r}")
    return FineGrid(coarse, r)


@dataclass(frozen=True, eq=False)
class PatchIndex:
    """Element neighbourhood of order ``ell`` padded to a full bounding box.

    Cell slots are ``(2 ell + 1)^2`` virtual coarse cells, node slots
    ``(2 ell + 2)^2`` virtual coarse nodes; both row-major over the box.
    Slot coordinates may fall outside the domain.
    """

    grid: CoarseGrid
    center: int
    ell: int
    cell_xy: np.ndarray
    node_xy: np.ndarray

    @property
    def center_xy(self) -> tuple[int, int]:
        return self.grid.element_coords(self.center)

    @property
    def cells_per_side(self) -> int:
        return 2 * self.ell + 1

    @property
    def nodes_per_side(self) -> int:
        return 2 * self.ell + 2

    @cached_property
    def inside_mask(self) -> np.ndarray:
        """Cell slots belonging to the domain."""
        n = self.grid.n
        x, y = self.cell_xy[:, 0], self.cell_xy[:, 1]
        return (x >= 0) & (x < n) & (y >= 0) & (y < n)

    @cached_property
    def node_inside(self) -> np.ndarray:
        """Node slots in the closed domain (boundary included)."""
        n = self.grid.n
        x, y = self.node_xy[:, 0], self.node_xy[:, 1]
        return (x >= 0) & (x <= n) & (y >= 0) & (y <= n)

    @cached_property
    def node_interior(self) -> np.ndarray:
        """Node slots carrying a global degree of freedom."""
        n = self.grid.n
        x, y = self.node_xy[:, 0], self.node_xy[:, 1]
        return (x > 0) & (x < n) & (y > 0) & (y < n)

    @cached_property
    def cells(self) -> np.ndarray:
        """Global element index per cell slot, DISCARD outside the domain."""
        out = self.cell_xy[:, 0] + self.grid.n * self.cell_xy[:, 1]
        return np.where(self.inside_mask, out, DISCARD)

    @cached_property
    def nodes(self) -> np.ndarray:
        """Global node index per node slot, DISCARD outside the closed domain."""
        out = self.node_xy[:, 0] + (self.grid.n + 1) * self.node_xy[:, 1]
        return np.where(self.node_inside, out, DISCARD)

    @cached_property
    def box(self) -> tuple[int, int, int, int]:
        """Coarse cell range ``(x0, x1, y0, y1)`` of the physical patch, half-open."""
        n = self.grid.n
        tx, ty = self.center_xy
        return (max(tx - self.ell, 0), min(tx + self.ell + 1, n),
                max(ty - self.ell, 0), min(ty + self.ell + 1, n))

    @cached_property
    def corner_slots(self) -> np.ndarray:
        """Node slots of the four corners of the centre element, lexicographic."""
        k = self.nodes_per_side
        base = self.ell + k * self.ell
        return np.array([base, base + 1, base + k, base + k + 1])


def patch(grid: CoarseGrid, T: int, ell: int) -> PatchIndex:
    if ell < 1:
        raise ValueError(f"localization order must be >= 1, got {ell}")
    tx, ty = grid.element_coords(T)
    c = np.arange(-ell, ell + 1)
    cx, cy = np.meshgrid(tx + c, ty + c, indexing="xy")
    v = np.arange(-ell, ell + 2)
    nx, ny = np.meshgrid(tx + v, ty + v, indexing="xy")
    return PatchIndex(
        grid=grid,
        center=T,
        ell=ell,
        cell_xy=np.column_stack([cx.ravel(), cy.ravel()]),
        node_xy=np.column_stack([nx.ravel(), ny.ravel()]),
    )


@dataclass(frozen=True)
class LocalToGlobal:
    """Row/column targets of a local ``N x 4`` matrix in the global DOF matrix."""

    rows: np.ndarray
    cols: np.ndarray

    def entries(self):
        """Flat (local_row, local_col, global_row, global_col) for retained entries."""
        r = np.flatnonzero(self.rows != DISCARD)
        c = np.flatnonzero(self.cols != DISCARD)
        lr, lc = np.meshgrid(r, c, indexing="ij")
        lr, lc = lr.ravel(), lc.ravel()
        return lr, lc, self.rows[lr], self.cols[lc]


def local_to_global(grid: CoarseGrid, p: PatchIndex) -> LocalToGlobal:
    dof = grid.node_to_dof
    rows = np.where(p.node_inside, dof[np.maximum(p.nodes, 0)], DISCARD)
    rows = np.where(p.node_interior, rows, DISCARD)
    cols = rows[p.corner_slots]
    return LocalToGlobal(rows=rows, cols=cols)


def restrict_field(values: np.ndarray, field_grid: FineGrid, p: PatchIndex) -> np.ndarray:
    """Patch-local copy of a cellwise field, zero on the virtual exterior cells.

    ``values`` is the ``(n, n)`` (or flat) array of cell values on ``field_grid``.
    The result covers the padded patch box as a single image of
    ``((2 ell + 1) r)^2`` cells, row-major with x fastest.
    """
    if field_grid.parent.n != p.grid.n:
        raise ValueError(
            f"field lives on a refinement of a {field_grid.parent.n}x{field_grid.parent.n} "
            f"coarse grid, patch on {p.grid.n}x{p.grid.n}")
    r = field_grid.refinement
    n = field_grid.n
    img = np.asarray(values, dtype=float).reshape(n, n)
    side = p.cells_per_side * r
    out = np.zeros((side, side))
    tx, ty = p.center_xy
    x0 = (tx - p.ell) * r
    y0 = (ty - p.ell) * r
    sx0, sx1 = max(x0, 0), min(x0 + side, n)
    sy0, sy1 = max(y0, 0), min(y0 + side, n)
    out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = img[sy0:sy1, sx0:sx1]
    return out.ravel()


def restrict_all(values: np.ndarray, field_grid: FineGrid, ell: int) -> np.ndarray:
    """Stack of :func:`restrict_field` over all coarse elements in element order."""
    coarse = field_grid.parent
    r = field_grid.refinement
    n = field_grid.n
    pad = ell * r
    img = np.pad(np.asarray(values, dtype=float).reshape(n, n), pad)
    side = (2 * ell + 1) * r
    windows = np.lib.stride_tricks.sliding_window_view(img, (side, side))[::r, ::r]
    return windows.reshape(coarse.n * coarse.n, side * side).copy()


def prolong_cells(values: np.ndarray, source: FineGrid, target: FineGrid) -> np.ndarray:
    """Piecewise-constant injection of cell values onto a finer grid."""
    if source.parent.n != target.parent.n or target.refinement % source.refinement:
        raise ValueError("target grid does not refine the source grid")
    q = target.refinement // source.refinement
    img = np.asarray(values, dtype=float).reshape(source.n, source.n)
    if q == 1:
        return img.copy()
    return np.repeat(np.repeat(img, q, axis=0), q, axis=1)
