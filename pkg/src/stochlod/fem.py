"""Q1 finite elements on uniform Cartesian grids with cellwise constant coefficients."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import FineGrid, prolong_cells

# local node order (0,0), (1,0), (0,1), (1,1)
Q1_STIFFNESS = np.array([
    [4.0, -1.0, -1.0, -2.0],
    [-1.0, 4.0, -2.0, -1.0],
    [-1.0, -2.0, 4.0, -1.0],
    [-2.0, -1.0, -1.0, 4.0],
]) / 6.0

Q1_MASS_UNIT = np.array([
    [4.0, 2.0, 2.0, 1.0],
    [2.0, 4.0, 1.0, 2.0],
    [2.0, 1.0, 4.0, 2.0],
    [1.0, 2.0, 2.0, 4.0],
]) / 36.0


class SolverError(RuntimeError):
    pass


@dataclass
class FemSolution:
    grid: FineGrid
    values: np.ndarray  # all (n + 1)^2 nodes, zero on the boundary

    def as_image(self) -> np.ndarray:
        return self.values.reshape(self.grid.n + 1, self.grid.n + 1)

    def at_coarse_nodes(self) -> np.ndarray:
        """Nodal values at the coarse mesh nodes (all of them, boundary included)."""
        r = self.grid.refinement
        return self.as_image()[::r, ::r].ravel().copy()


class _Pattern:
    """CSR sparsity of a Q1 matrix on an ``nx x ny`` cell block plus scatter slots."""

    def __init__(self, nx: int, ny: int):
        self.nx, self.ny = nx, ny
        self.n_nodes = (nx + 1) * (ny + 1)
        cx, cy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
        base = (cx + (nx + 1) * cy).ravel()
        self.cell_nodes = np.column_stack([base, base + 1, base + nx + 1, base + nx + 2])
        rows = np.repeat(self.cell_nodes, 4, axis=1).ravel()
        cols = np.tile(self.cell_nodes, (1, 4)).ravel()
        key = rows * self.n_nodes + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.slot = slot
        self.nnz = uniq.size
        self.indices = (uniq % self.n_nodes).astype(np.int32)
        counts = np.bincount(uniq // self.n_nodes, minlength=self.n_nodes)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def build(self, cell_coef: np.ndarray, local: np.ndarray) -> sp.csr_matrix:
        vals = np.outer(np.ravel(cell_coef), local.ravel()).ravel()
        data = np.bincount(self.slot, weights=vals, minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()),
                             shape=(self.n_nodes, self.n_nodes))


@lru_cache(maxsize=64)
def pattern(nx: int, ny: int) -> _Pattern:
    return _Pattern(nx, ny)


def q1_stiffness(nx: int, ny: int, cell_coef) -> sp.csr_matrix:
    """Stiffness on all nodes of an ``nx x ny`` block of square cells.

    In 2D the element matrix does not depend on the cell size.  Explicit
    zeros from vanishing coefficients are kept so that the pattern is fixed.
    """
    coef = np.broadcast_to(np.asarray(cell_coef, dtype=float), (ny, nx))
    return pattern(nx, ny).build(coef, Q1_STIFFNESS)


def q1_mass(nx: int, ny: int, h: float, cell_coef=1.0) -> sp.csr_matrix:
    coef = np.broadcast_to(np.asarray(cell_coef, dtype=float), (ny, nx))
    return pattern(nx, ny).build(coef, Q1_MASS_UNIT * h * h)


def interior_index(nx: int, ny: int) -> np.ndarray:
    x, y = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="xy")
    return (x + (nx + 1) * y).ravel()


def coefficient_on(grid: FineGrid, a) -> np.ndarray:
    """Cell values of ``a`` (FieldRealization or array) on ``grid``."""
    if hasattr(a, "grid"):
        values = a.values
        if a.grid != grid:
            values = prolong_cells(values, a.grid, grid)
        return np.asarray(values).reshape(grid.n, grid.n)
    values = np.asarray(a, dtype=float)
    if values.size == 1:
        return np.full((grid.n, grid.n), float(values))
    return values.reshape(grid.n, grid.n)


def assemble_stiffness(grid: FineGrid, a, full: bool = False) -> sp.csr_matrix:
    coef = coefficient_on(grid, a)
    if not np.all(coef > 0):
        raise ValueError("coefficient must be strictly positive")
    K = q1_stiffness(grid.n, grid.n, coef)
    if full:
        return K
    free = grid.interior_nodes
    K = K[free][:, free]
    K.eliminate_zeros()
    return K


def assemble_load(grid: FineGrid, f=1.0, full: bool = False) -> np.ndarray:
    """Exact Q1 load for a cellwise constant right-hand side."""
    n = grid.n
    fc = np.broadcast_to(np.asarray(f, dtype=float), (n, n)) * (0.25 * grid.h * grid.h)
    b = np.zeros((n + 1, n + 1))
    b[:-1, :-1] += fc
    b[:-1, 1:] += fc
    b[1:, :-1] += fc
    b[1:, 1:] += fc
    b = b.ravel()
    return b if full else b[grid.interior_nodes]


def solve_dirichlet(K, b, grid: FineGrid | None = None, tol: float = 1e-12,
                    method: str = "auto", maxiter: int | None = None):
    """Solve ``K x = b`` to relative residual ``tol``.

    Returns a :class:`FemSolution` when ``grid`` is given (``x`` scattered onto
    the interior nodes), else the interior vector.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x = np.zeros_like(b)
    else:
        if method == "auto":
            method = "direct" if K.shape[0] <= 300_000 else "cg"
        if method == "direct":
            x = spla.spsolve(sp.csc_matrix(K), b)
        elif method == "cg":
            d = K.diagonal()
            M = spla.LinearOperator(K.shape, matvec=lambda v: v / d)
            x, _ = spla.cg(K, b, rtol=tol, atol=0.0, M=M,
                           maxiter=maxiter or 20 * K.shape[0])
        else:
            raise ValueError(f"unknown method {method!r}")
        res = np.linalg.norm(K @ x - b) / bnorm
        if not res <= tol:
            raise SolverError(f"solve did not reach tol={tol:g}: relative residual {res:.3e}")
    if grid is None:
        return x
    full = np.zeros(grid.n_nodes)
    full[grid.interior_nodes] = x
    return FemSolution(grid, full)


def solve_fem(grid: FineGrid, a, f=1.0, tol: float = 1e-12) -> FemSolution:
    K = assemble_stiffness(grid, a)
    return solve_dirichlet(K, assemble_load(grid, f), grid, tol)
