# modules/uic.py
"""
Pressure interaction enforcing the maximum crowd density.

Every step the density update

    rho_new = rho + dt * (C(rho) p + b(rho, v))

is written as a linear complementarity problem in the pressure p: find
z >= 0 with w = M z + q >= 0 and <w, z> = 0, where w = rho_max - rho_new.
The problem is solved by projected Gauss-Seidel with a warm start and the
pressure gradient is fed back into the crowd velocity.

Vectors use the flat cell order of modules.scene (x is the fast index).
"""

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import svds

from modules.fields import ScalarField, VectorField, central_dx, central_dy, cutoff_L, gradient_central
from modules.scene import Grid
from utils.logger import get_logger
from utils.utility import LcpSolverError

logger = get_logger(__name__)

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn

ORACLE_MAX_SIZE = 12


@dataclass(frozen=True)
class PressureParams:
    max_density: float = 2.73
    boundary_pressure: float = 1.0
    density_shift: float = 0.01
    tolerance: float = 1e-6
    max_iterations: Optional[int] = None
    speed_max: float = 1.44

    def iteration_cap(self, n: int) -> int:
        return self.max_iterations if self.max_iterations is not None else 10 * n


@dataclass
class LcpProblem:
    M: sp.csr_matrix
    q: np.ndarray
    fixed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.M = sp.csr_matrix(self.M)
        self.M.sort_indices()
        self.M.eliminate_zeros()
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = len(self.q)
        if self.M.shape != (n, n):
            raise LcpSolverError(f"LCP shape mismatch: M {self.M.shape}, q ({n},)")
        if not np.all(np.isfinite(self.q)):
            raise LcpSolverError("LCP vector q has non-finite entries")

    @property
    def size(self) -> int:
        return len(self.q)


@dataclass
class LcpSolution:
    z: np.ndarray
    w: np.ndarray
    fb_residual: float
    iterations: int
    converged: bool


def assemble_tridiagonal(kind: str, m: int) -> sp.csr_matrix:
    """
    P_m: zero diagonal, +1 above, -1 below (central difference).
    Q_m: -2 on the diagonal, +1 beside it (second difference).
    """
    if m < 1:
        raise ValueError(f"Matrix size must be >= 1, got {m}")
    if kind == "P":
        return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1], shape=(m, m), format="csr")
    if kind == "Q":
        return sp.diags([np.ones(m - 1), -2.0 * np.ones(m), np.ones(m - 1)], [-1, 0, 1],
                        shape=(m, m), format="csr")
    raise ValueError(f"kind must be 'P' or 'Q', got {kind!r}")


def kronecker(A, B) -> sp.csr_matrix:
    return sp.kron(A, B, format="csr")


def difference_operators(grid: Grid):
    """(D_x, D_y, Q_x, Q_y) acting on flat cell vectors"""
    ix = sp.identity(grid.nx, format="csr")
    iy = sp.identity(grid.ny, format="csr")
    dx_op = kronecker(iy, assemble_tridiagonal("P", grid.nx))
    dy_op = kronecker(assemble_tridiagonal("P", grid.ny), ix)
    qx_op = kronecker(iy, assemble_tridiagonal("Q", grid.nx))
    qy_op = kronecker(assemble_tridiagonal("Q", grid.ny), ix)
    return dx_op, dy_op, qx_op, qy_op


def assemble_C(rho: ScalarField) -> sp.csr_matrix:
    """
    Pressure operator: C p = grad(rho) . grad(p) + rho * lap(p) with central
    gradients and the compact Laplacian.
    """
    g = rho.grid
    dx_op, dy_op, qx_op, qy_op = difference_operators(g)
    r = rho.flat()
    C = (sp.diags(dx_op @ r) @ dx_op / (4.0 * g.dx ** 2)
         + sp.diags(dy_op @ r) @ dy_op / (4.0 * g.dy ** 2)
         + sp.diags(r) @ qx_op / g.dx ** 2
         + sp.diags(r) @ qy_op / g.dy ** 2)
    C = sp.csr_matrix(C)
    C.eliminate_zeros()
    C.sort_indices()
    return C


def wall_ghost_weights(rho: ScalarField, open_cells: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Coefficients C would give the ghost pressures beyond the domain edge.

    A closed wall mirrors the boundary pressure into its ghost cell, so these
    weights are added to the diagonal of C. Cells in ``open_cells`` (exits)
    keep the zero ghost pressure. Returns a flat vector.
    """
    g = rho.grid
    r = rho.values
    grad_x = central_dx(r) / (4.0 * g.dx ** 2)
    grad_y = central_dy(r) / (4.0 * g.dy ** 2)
    ghost = np.zeros(g.shape)
    ghost[:, -1] += r[:, -1] / g.dx ** 2 + grad_x[:, -1]
    ghost[:, 0] += r[:, 0] / g.dx ** 2 - grad_x[:, 0]
    ghost[-1, :] += r[-1, :] / g.dy ** 2 + grad_y[-1, :]
    ghost[0, :] += r[0, :] / g.dy ** 2 - grad_y[0, :]
    if open_cells is not None:
        ghost[np.asarray(open_cells, dtype=bool)] = 0.0
    return ghost.ravel()


def assemble_b(rho: ScalarField, v: VectorField) -> np.ndarray:
    """Advection term b = -div(rho v), flat"""
    g = rho.grid
    flux_x = rho.values * v.x.values
    flux_y = rho.values * v.y.values
    div = central_dx(flux_x) / (2.0 * g.dx) + central_dy(flux_y) / (2.0 * g.dy)
    return -div.ravel()


def advance_density(rho: ScalarField, v: VectorField, z: np.ndarray, dt: float) -> ScalarField:
    """rho + dt * (C(rho) z + b(rho, v))"""
    change = assemble_C(rho) @ np.asarray(z, dtype=float) + assemble_b(rho, v)
    return ScalarField.from_flat(rho.grid, rho.flat() + dt * change)


def build_lcp(rho: ScalarField, v: VectorField, params: PressureParams, dt: float,
              mask: Optional[np.ndarray] = None, closed_walls: bool = False,
              open_cells: Optional[np.ndarray] = None) -> LcpProblem:
    """
    Complementarity problem for one step.

    With rho~ = rho + shift: M = -dt C(rho~), q = rho_max - rho~ - dt b(rho~, v).
    Obstacle cells get the identity row with z fixed at the boundary pressure;
    their columns move into q for the remaining rows. With ``closed_walls``
    the domain edge mirrors the pressure (no pressure flux through walls)
    except at ``open_cells``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    shifted = ScalarField(rho.grid, rho.values + params.density_shift)
    M = sp.csr_matrix(-dt * assemble_C(shifted))
    if closed_walls:
        M = sp.csr_matrix(M - dt * sp.diags(wall_ghost_weights(shifted, open_cells)))
    q = params.max_density - shifted.flat() - dt * assemble_b(shifted, v)

    fixed = None
    if mask is not None and np.any(mask):
        fixed = np.asarray(mask, dtype=bool).ravel()
        p0 = params.boundary_pressure
        q = q + p0 * np.asarray(M[:, fixed].sum(axis=1)).ravel()
        keep = sp.diags((~fixed).astype(float))
        M = sp.csr_matrix(keep @ M @ keep + sp.diags(fixed.astype(float)))
        q[fixed] = -p0
    return LcpProblem(M, q, fixed)


@njit(cache=True)
def _pgs_kernel(indptr, indices, data, q, z, tol, max_iter):
    n = q.shape[0]
    diag = np.zeros(n)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                diag[i] = data[k]
    for i in range(n):
        if diag[i] == 0.0:
            return -1 - i, False

    iterations = 0
    while True:
        # convergence check on the current iterate
        min_w = np.inf
        wz = 0.0
        for i in range(n):
            s = q[i]
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * z[indices[k]]
            if s < min_w:
                min_w = s
            wz += s * z[i]
        if min_w >= -tol and abs(wz) <= tol:
            return iterations, True
        if iterations >= max_iter:
            return iterations, False

        for i in range(n):
            s = q[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s += data[k] * z[j]
            value = -s / diag[i]
            z[i] = value if value > 0.0 else 0.0
        iterations += 1


def pgs_solve(prob: LcpProblem, z0: Optional[np.ndarray] = None, tol: float = 1e-6,
              max_iter: Optional[int] = None) -> LcpSolution:
    """
    Projected Gauss-Seidel.

    Sweeps z_i <- max(0, -(q_i + sum_{j != i} M_ij z_j) / M_ii) in ascending
    order until min(w) >= -tol and |<w, z>| <= tol, or the iteration cap.

    Args:
        prob: the LCP
        z0: warm start (zeros when omitted)
        tol: stopping tolerance
        max_iter: sweep cap, 10 * n when omitted

    Raises:
        LcpSolverError: zero diagonal entry or warm start of the wrong size
    """
    n = prob.size
    z = np.zeros(n) if z0 is None else np.maximum(np.asarray(z0, dtype=float).copy(), 0.0)
    if z.shape != (n,):
        raise LcpSolverError(f"Warm start has shape {z.shape}, expected ({n},)")
    cap = 10 * n if max_iter is None else int(max_iter)

    M = prob.M
    iterations, converged = _pgs_kernel(M.indptr.astype(np.int64), M.indices.astype(np.int64),
                                        M.data.astype(np.float64), prob.q, z, float(tol), cap)
    if iterations < 0:
        raise LcpSolverError(f"Zero diagonal entry in row {-iterations - 1}")

    w = M @ z + prob.q
    residual = fb_residual(w, z)
    if not converged:
        logger.warning(f"⚠️ PGS stopped after {iterations} sweeps without converging (FB residual {residual:.3e})")
    else:
        logger.debug(f"PGS converged in {iterations} sweeps, FB residual {residual:.3e}")
    return LcpSolution(z=z, w=w, fb_residual=residual, iterations=iterations, converged=converged)


def lcp_active_set_oracle(M, q, tol: float = 1e-10) -> np.ndarray:
    """
    Exact LCP solution by enumerating active sets, smallest first.

    For each set A solves M_AA z_A = -q_A with z zero elsewhere and accepts
    the first z >= 0 with M z + q >= 0. Only for n <= 12.

    Raises:
        ValueError: problem too large
        LcpSolverError: no active set is feasible
    """
    M = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    q = np.asarray(q, dtype=float).reshape(-1)
    n = len(q)
    if n > ORACLE_MAX_SIZE:
        raise ValueError(f"Active-set enumeration is limited to n <= {ORACLE_MAX_SIZE}, got {n}")

    for size in range(n + 1):
        for active in itertools.combinations(range(n), size):
            z = np.zeros(n)
            if size:
                idx = list(active)
                try:
                    z[idx] = np.linalg.solve(M[np.ix_(idx, idx)], -q[idx])
                except np.linalg.LinAlgError:
                    continue
                if np.any(z[idx] < -tol):
                    continue
            w = M @ z + q
            if np.all(w >= -tol):
                return np.maximum(z, 0.0)
    raise LcpSolverError("LCP is infeasible: no active set satisfies z >= 0 and Mz + q >= 0")


def fb_residual(w, z) -> float:
    """Norm of the Fischer-Burmeister function w + z - sqrt(w^2 + z^2)"""
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    return float(np.linalg.norm(w + z - np.hypot(w, z)))


def qp_objective(M, q, z) -> float:
    """z^T (M z + q); zero exactly at an LCP solution among feasible z"""
    z = np.asarray(z, dtype=float)
    return float(z @ (M @ z + np.asarray(q, dtype=float)))


def wall_gradient(p: ScalarField, open_cells: Optional[np.ndarray] = None) -> VectorField:
    """Central pressure gradient with the boundary pressure mirrored across closed walls"""
    g = p.grid
    u = p.values
    padded = np.pad(u, 1, mode="edge")
    if open_cells is not None:
        shut = ~np.asarray(open_cells, dtype=bool)
        padded[1:-1, -1] *= shut[:, -1]
        padded[1:-1, 0] *= shut[:, 0]
        padded[-1, 1:-1] *= shut[-1, :]
        padded[0, 1:-1] *= shut[0, :]
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / (2.0 * g.dx)
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / (2.0 * g.dy)
    return VectorField(ScalarField(g, gx), ScalarField(g, gy))


def apply_pressure(v: VectorField, z: np.ndarray, v_max: float, closed_walls: bool = False,
                   open_cells: Optional[np.ndarray] = None) -> VectorField:
    """
    Final crowd velocity v_max (v - grad p) / |v - grad p| per cell.

    Cells where |v - grad p| < 1e-12 get zero velocity. ``closed_walls``
    selects the mirrored gradient of :func:`wall_gradient`.
    """
    grid = v.grid
    pressure = ScalarField.from_flat(grid, z)
    grad = wall_gradient(pressure, open_cells) if closed_walls else gradient_central(pressure)
    ux = v.x.values - grad.x.values
    uy = v.y.values - grad.y.values
    norm = np.hypot(ux, uy)
    moving = norm >= 1e-12
    scale = np.zeros_like(norm)
    scale[moving] = v_max / norm[moving]
    return VectorField(ScalarField(grid, ux * scale), ScalarField(grid, uy * scale))


def swarm_blend(desired: np.ndarray, crowd: np.ndarray, rho: np.ndarray, rho_max: float) -> np.ndarray:
    """
    Particle velocity between its desired velocity (empty surroundings) and
    the crowd velocity (at maximum density), linear in the local density.
    """
    weight = np.atleast_1d(cutoff_L(0.0, rho_max, np.atleast_1d(rho)))
    desired = np.asarray(desired, dtype=float).reshape(-1, 2)
    crowd = np.asarray(crowd, dtype=float).reshape(-1, 2)
    return desired + weight[:, None] * (crowd - desired)


def asymmetry_ratio(M) -> float:
    """|(M - M^T)/2|_2 / |M|_2 by truncated SVD (dense norms for tiny matrices)"""
    M = sp.csr_matrix(M)
    skew = sp.csr_matrix((M - M.T) / 2.0)
    skew.eliminate_zeros()
    if min(M.shape) <= 2:
        top = np.linalg.norm(M.toarray(), 2)
        return 0.0 if top == 0 else float(np.linalg.norm(skew.toarray(), 2) / top)
    if M.nnz == 0:
        return 0.0
    top = svds(M.astype(float), k=1, return_singular_vectors=False, random_state=0)[0]
    if top == 0:
        return 0.0
    if skew.nnz == 0:
        return 0.0
    skew_top = svds(skew.astype(float), k=1, return_singular_vectors=False, random_state=0)[0]
    return float(skew_top / top)
