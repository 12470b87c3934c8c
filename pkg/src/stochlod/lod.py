"""Petrov-Galerkin localized orthogonal decomposition.

Quasi-interpolation is ``I_H = E_H o Pi_H``: an L2 projection onto Q1 on each
coarse element followed by averaging the four element values at every
interior coarse node.  Element correctors live on the physical part of the
patch with homogeneous Dirichlet data on its boundary and satisfy
``I_H q = 0`` at the coarse nodes interior to the patch, enforced through
Lagrange multipliers.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem
from .grid import DISCARD, CoarseGrid, FineGrid, PatchIndex, local_to_global, patch

MIN_COEFFICIENT = 1e-14


class CorrectorError(RuntimeError):
    pass


# -- reference objects ------------------------------------------------------

@lru_cache(maxsize=None)
def prolongation_1d(n_coarse: int, r: int) -> np.ndarray:
    """Hat functions of ``n_coarse`` cells sampled at the ``n_coarse * r + 1`` fine nodes."""
    t = np.arange(n_coarse * r + 1) / r
    return np.maximum(0.0, 1.0 - np.abs(t[:, None] - np.arange(n_coarse + 1)[None, :]))


@lru_cache(maxsize=None)
def prolongation(nx: int, ny: int, r: int) -> sp.csr_matrix:
    """Coarse Q1 nodal basis on an ``nx x ny`` cell block as fine nodal vectors."""
    P = sp.kron(sp.csr_matrix(prolongation_1d(ny, r)), sp.csr_matrix(prolongation_1d(nx, r)))
    return P.tocsr()


@lru_cache(maxsize=None)
def element_projection(r: int) -> np.ndarray:
    """Nodal values of the local L2 projection onto Q1, as a ``4 x (r+1)^2`` map."""
    phi = prolongation(1, 1, r).toarray()
    M_fine = fem.q1_mass(r, r, 1.0 / r).toarray()
    M_coarse = fem.Q1_MASS_UNIT
    return np.linalg.solve(M_coarse, phi.T @ M_fine)


@lru_cache(maxsize=None)
def _block_interpolation(nx: int, ny: int, r: int) -> sp.csr_matrix:
    """Rows of I_H for the coarse nodes interior to an ``nx x ny`` cell block."""
    P_loc = element_projection(r)
    nfx = nx * r + 1
    li, lj = np.meshgrid(np.arange(r + 1), np.arange(r + 1), indexing="xy")
    local_nodes = (li + nfx * lj).ravel()
    rows, cols, vals = [], [], []
    ncx = nx - 1
    for ey in range(ny):
        for ex in range(nx):
            fine_nodes = local_nodes + ex * r + nfx * ey * r
            for c, (dx, dy) in enumerate(((0, 0), (1, 0), (0, 1), (1, 1))):
                X, Y = ex + dx, ey + dy
                if 0 < X < nx and 0 < Y < ny:
                    rows.append(np.full(fine_nodes.size, (X - 1) + ncx * (Y - 1)))
                    cols.append(fine_nodes)
                    vals.append(0.25 * P_loc[c])
    n_rows = max(nx - 1, 0) * max(ny - 1, 0)
    if not rows:
        return sp.csr_matrix((0, nfx * (ny * r + 1)))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n_rows, nfx * (ny * r + 1)))


@dataclass(frozen=True)
class Interpolator:
    coarse: CoarseGrid
    fine: FineGrid
    matrix: sp.csr_matrix  # interior coarse DOFs x all fine nodes

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Coarse nodal values (all nodes, zero on the boundary) of ``I_H v``.

        ``v`` may hold several fine vectors as columns.
        """
        v = np.asarray(v)
        out = np.zeros((self.coarse.n_nodes,) + v.shape[1:])
        out[self.coarse.interior_nodes] = self.matrix @ v
        return out


def build_interpolator(coarse: CoarseGrid, fine: FineGrid) -> Interpolator:
    if fine.parent != coarse:
        raise ValueError("fine grid does not refine the coarse grid")
    M = _block_interpolation(coarse.n, coarse.n, fine.refinement)
    return Interpolator(coarse, fine, M)


# -- correctors -------------------------------------------------------------

@dataclass
class CorrectorSet:
    patch: PatchIndex
    fine: FineGrid
    fine_nodes: np.ndarray   # global fine node index of every physical patch node
    values: np.ndarray       # (n_patch_nodes, 4), zero on the patch boundary
    stiffness: sp.csr_matrix
    element_matrix: np.ndarray  # coarse element stiffness of A on T (4 x 4)

    def global_vectors(self) -> np.ndarray:
        out = np.zeros((self.fine.n_nodes, 4))
        out[self.fine_nodes] = self.values
        return out


@dataclass
class LocalSurrogate:
    patch: PatchIndex
    matrix: np.ndarray  # (N_slots, 4)

    @property
    def vec(self) -> np.ndarray:
        return self.matrix.ravel(order="F")

    @classmethod
    def from_vec(cls, p: PatchIndex, vec: np.ndarray) -> "LocalSurrogate":
        m = np.asarray(vec, dtype=float).reshape(4, -1).T.copy()
        return cls(p, m)


def _patch_geometry(p: PatchIndex, fine: FineGrid):
    x0, x1, y0, y1 = p.box
    r = fine.refinement
    nx, ny = x1 - x0, y1 - y0
    nfx, nfy = nx * r + 1, ny * r + 1
    gi, gj = np.meshgrid(np.arange(nfx) + x0 * r, np.arange(nfy) + y0 * r, indexing="xy")
    fine_nodes = (gi + (fine.n + 1) * gj).ravel()
    return x0, y0, nx, ny, fine_nodes


def _patch_coefficient(a, fine: FineGrid, p: PatchIndex) -> np.ndarray:
    coef = fem.coefficient_on(fine, a)
    x0, x1, y0, y1 = p.box
    r = fine.refinement
    return coef[y0 * r:y1 * r, x0 * r:x1 * r]


def solve_correctors(p: PatchIndex, a, fine: FineGrid, zero_load: bool = False) -> CorrectorSet:
    """Element correctors of the four coarse basis functions of the patch centre."""
    if fine.parent != p.grid:
        raise ValueError("fine grid does not refine the patch grid")
    r = fine.refinement
    x0, y0, nx, ny, fine_nodes = _patch_geometry(p, fine)
    coef = _patch_coefficient(a, fine, p)
    if not np.all(coef >= MIN_COEFFICIENT):
        raise CorrectorError(f"coefficient below {MIN_COEFFICIENT:g} in patch of element {p.center}")
    K = fem.q1_stiffness(nx * r, ny * r, coef)
    free = fem.interior_index(nx * r, ny * r)

    tx, ty = p.center_xy
    tx, ty = tx - x0, ty - y0
    coef_T = coef[ty * r:(ty + 1) * r, tx * r:(tx + 1) * r]
    K_T = fem.q1_stiffness(r, r, coef_T)
    phi_T = prolongation(1, 1, r)
    B_loc = np.asarray(K_T @ phi_T.toarray())
    E = phi_T.T @ B_loc

    n_nodes = fine_nodes.size
    values = np.zeros((n_nodes, 4))
    if not zero_load:
        nfx = nx * r + 1
        li, lj = np.meshgrid(np.arange(r + 1), np.arange(r + 1), indexing="xy")
        t_nodes = (li + tx * r + nfx * (lj + ty * r)).ravel()
        load = np.zeros((n_nodes, 4))
        load[t_nodes] = B_loc
        C = _block_interpolation(nx, ny, r)[:, free]
        Kff = K[free][:, free]
        nc = C.shape[0]
        saddle = sp.bmat([[Kff, C.T], [C, None]], format="csc")
        rhs = np.zeros((free.size + nc, 4))
        rhs[:free.size] = load[free]
        try:
            lu = spla.splu(saddle)
        except RuntimeError as exc:
            raise CorrectorError(f"singular corrector system for element {p.center}: {exc}") from exc
        sol = lu.solve(rhs)
        if not np.all(np.isfinite(sol)):
            raise CorrectorError(f"non-finite corrector for element {p.center}")
        values[free] = sol[:free.size]
    return CorrectorSet(p, fine, fine_nodes, values, K, E)


def local_surrogate(p: PatchIndex, correctors: CorrectorSet) -> LocalSurrogate:
    """Local PG-LOD matrix with one row per node slot and one column per corner of T."""
    if correctors.patch is not p and correctors.patch.center != p.center:
        raise ValueError("correctors belong to a different patch")
    r = correctors.fine.refinement
    x0, x1, y0, y1 = p.box
    nx, ny = x1 - x0, y1 - y0
    Phi = prolongation(nx, ny, r)
    G = Phi.T @ (correctors.stiffness @ correctors.values)
    S_patch = -np.asarray(G)
    tx, ty = p.center_xy
    tx, ty = tx - x0, ty - y0
    corners = np.array([tx + (nx + 1) * ty, tx + 1 + (nx + 1) * ty,
                        tx + (nx + 1) * (ty + 1), tx + 1 + (nx + 1) * (ty + 1)])
    S_patch[corners] += correctors.element_matrix

    out = np.zeros((p.nodes_per_side ** 2, 4))
    inside = p.node_inside
    gx = p.node_xy[inside, 0] - x0
    gy = p.node_xy[inside, 1] - y0
    out[inside] = S_patch[gx + (nx + 1) * gy]
    return LocalSurrogate(p, out)


def compute_local_surrogate(grid: CoarseGrid, fine: FineGrid, a, T: int, ell: int) -> LocalSurrogate:
    p = patch(grid, T, ell)
    return local_surrogate(p, solve_correctors(p, a, fine))


def compute_all_local(grid: CoarseGrid, fine: FineGrid, a, ell: int) -> np.ndarray:
    """Stack ``(n_elements, N_slots, 4)`` of local surrogates in element order."""
    coef = fem.coefficient_on(fine, a)
    mats = [compute_local_surrogate(grid, fine, coef, T, ell).matrix for T in grid.elements]
    return np.stack(mats)


# -- global assembly --------------------------------------------------------

@lru_cache(maxsize=16)
def _assembly_maps(grid: CoarseGrid, ell: int):
    rows, cols = [], []
    for T in grid.elements:
        l2g = local_to_global(grid, patch(grid, T, ell))
        rows.append(l2g.rows)
        cols.append(l2g.cols)
    rows = np.stack(rows)
    cols = np.stack(cols)
    R = np.broadcast_to(rows[:, :, None], rows.shape + (4,))
    C = np.broadcast_to(cols[:, None, :], R.shape)
    valid = (R != DISCARD) & (C != DISCARD)
    return valid, R[valid], C[valid]


def assemble_global(grid: CoarseGrid, locals_, ell: int | None = None) -> sp.csr_matrix:
    """Sum of the inflated local matrices over the interior coarse DOFs."""
    if len(locals_) != grid.n_elements:
        raise ValueError(f"expected {grid.n_elements} local matrices, got {len(locals_)}")
    if isinstance(locals_, np.ndarray):
        mats = locals_
    else:
        mats = np.stack([s.matrix for s in locals_])
        if ell is None:
            ell = locals_[0].patch.ell
    if ell is None:
        ell = (int(round(np.sqrt(mats.shape[1]))) - 2) // 2
    valid, R, C = _assembly_maps(grid, ell)
    S = sp.coo_matrix((mats[valid], (R, C)), shape=(grid.n_interior, grid.n_interior)).tocsr()
    S.eliminate_zeros()
    return S


def coarse_load(grid: CoarseGrid, f=1.0) -> np.ndarray:
    return fem.assemble_load(FineGrid(grid, 1), f)


def solve_pglod(S: sp.csr_matrix, load: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Interior coarse nodal values of the PG-LOD solution."""
    load = np.asarray(load, dtype=float)
    if not np.any(load):
        return np.zeros_like(load)
    u = spla.spsolve(sp.csc_matrix(S), load)
    res = np.linalg.norm(S @ u - load) / np.linalg.norm(load)
    if not np.all(np.isfinite(u)) or not res <= tol:
        raise fem.SolverError(f"PG-LOD solve failed: relative residual {res:.3e}")
    return u


def pglod_solution(grid: CoarseGrid, fine: FineGrid, a, ell: int, f=1.0):
    """Convenience: local surrogates, global matrix and all-node coarse solution."""
    mats = compute_all_local(grid, fine, a, ell)
    S = assemble_global(grid, mats, ell)
    u = np.zeros(grid.n_nodes)
    u[grid.interior_nodes] = solve_pglod(S, coarse_load(grid, f))
    return u, S, mats


# -- diagnostics ------------------------------------------------------------

def global_correctors(grid: CoarseGrid, fine: FineGrid, a, ell: int) -> sp.csr_matrix:
    """Global corrector of every interior coarse basis function (fine nodes x DOFs)."""
    coef = fem.coefficient_on(fine, a)
    dof = grid.node_to_dof
    Q = np.zeros((fine.n_nodes, grid.n_interior))
    for T in grid.elements:
        p = patch(grid, T, ell)
        cs = solve_correctors(p, coef, fine)
        for c, node in enumerate(p.nodes[p.corner_slots]):
            j = dof[node]
            if j != DISCARD:
                Q[cs.fine_nodes, j] += cs.values[:, c]
    return sp.csr_matrix(Q)


def coarse_basis(grid: CoarseGrid, fine: FineGrid) -> sp.csr_matrix:
    """Interior coarse basis functions as fine nodal vectors (fine nodes x DOFs)."""
    return prolongation(grid.n, grid.n, fine.refinement)[:, grid.interior_nodes].tocsr()


def direct_global_matrix(grid: CoarseGrid, fine: FineGrid, a, ell: int) -> np.ndarray:
    """``a((id - Q) Lambda_j, Lambda_i)`` computed from global fine-scale vectors."""
    K = fem.assemble_stiffness(fine, a, full=True)
    Phi = coarse_basis(grid, fine)
    Q = global_correctors(grid, fine, a, ell)
    return (Phi.T @ (K @ (Phi - Q))).toarray()


def kernel_projector(grid: CoarseGrid, fine: FineGrid):
    """Euclidean projection of fine interior vectors onto ``ker I_H``."""
    C = build_interpolator(grid, fine).matrix[:, fine.interior_nodes].toarray()
    G = C @ C.T

    def project(v):
        return v - C.T @ np.linalg.solve(G, C @ v)
    return project


def orthogonality_residual(grid: CoarseGrid, fine: FineGrid, a, ell: int,
                           n_tests: int = 50, seed=0) -> float:
    """Largest normalized ``a((id - Q) Lambda_j, w)`` over random ``w`` in ``ker I_H``."""
    K = fem.assemble_stiffness(fine, a, full=True)
    ms = (coarse_basis(grid, fine) - global_correctors(grid, fine, a, ell)).toarray()
    project = kernel_projector(grid, fine)
    rng = np.random.default_rng(seed)
    interior = fine.interior_nodes
    ms_energy = np.sqrt(np.einsum("ij,ij->j", ms, K @ ms))
    worst = 0.0
    for _ in range(n_tests):
        w = np.zeros(fine.n_nodes)
        w[interior] = project(rng.standard_normal(interior.size))
        Kw = K @ w
        w_energy = np.sqrt(w @ Kw)
        worst = max(worst, float(np.max(np.abs(ms.T @ Kw) / (ms_energy * w_energy))))
    return worst


def full_domain_order(grid: CoarseGrid, T: int) -> int:
    tx, ty = grid.element_coords(T)
    return max(tx, ty, grid.n - 1 - tx, grid.n - 1 - ty)


def corrector_decay(grid: CoarseGrid, fine: FineGrid, a, T: int, ell_max: int | None = None):
    """Energy-norm distance between k-patch and full-domain correctors of ``T``.

    Returns rows ``(k, abs_error, rel_error)`` for ``k = 1..ell_max``; the
    error is the root sum of squares over the four corner correctors.
    """
    k_full = full_domain_order(grid, T)
    ell_max = k_full if ell_max is None else ell_max
    coef = fem.coefficient_on(fine, a)
    K = fem.assemble_stiffness(fine, coef, full=True)
    ref = solve_correctors(patch(grid, T, max(k_full, 1)), coef, fine).global_vectors()
    ref_norm = np.sqrt(np.sum(ref * (K @ ref)))
    table = []
    for k in range(1, ell_max + 1):
        q = solve_correctors(patch(grid, T, k), coef, fine).global_vectors()
        d = q - ref
        err = float(np.sqrt(max(np.sum(d * (K @ d)), 0.0)))
        table.append((k, err, float(err / ref_norm)))
    return table
