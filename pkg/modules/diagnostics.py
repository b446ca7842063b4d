# modules/diagnostics.py
"""
Verification probes behind the CLI's probe-* commands and the property
tests: lattice density bounds, fast-marching accuracy, PGS against the
active-set oracle, and the porous-medium relaxation with its Lyapunov
series.
"""

import math
import time
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from modules.eikonal import CostWeights, UnitCostField, fast_march
from modules.fields import EdgeField, ScalarField, VectorField
from modules.metrics import lyapunov_value
from modules.scene import Grid
from modules.sph import lattice_density_probe
from modules.uic import LcpProblem, PressureParams, build_lcp, lcp_active_set_oracle, pgs_solve
from utils.logger import get_logger

logger = get_logger(__name__)


def kernel_probe(spacings: Sequence[float] = (0.5, 1.0, 2.0), kind: str = "wendland") -> pd.DataFrame:
    """
    Closest-packing densities on triangular lattices.

    Columns: d, particle, centroid (densities at the two probe points), the
    same scaled by d^2, and the packing density 2/(sqrt(3) d^2).
    """
    rows = []
    for d in spacings:
        on_particle = lattice_density_probe(d, kind, "particle")
        at_centroid = lattice_density_probe(d, kind, "centroid")
        rows.append({
            "d": d,
            "particle": on_particle,
            "centroid": at_centroid,
            "particle_scaled": on_particle * d * d,
            "centroid_scaled": at_centroid * d * d,
            "packing": 2.0 / (math.sqrt(3.0) * d * d),
        })
    return pd.DataFrame(rows)


def unit_cost_field(grid: Grid) -> UnitCostField:
    return UnitCostField(EdgeField(grid, np.ones((4,) + grid.shape)), CostWeights(1.0, 0.0, 0.0))


def eikonal_probe(n: int = 100, cell_size: float = 1.0) -> Dict[str, float]:
    """
    March a unit-cost potential from the centre cell of an empty n x n grid.

    Returns:
        max_error against the Euclidean distance between cell centres, the
        values at a 4-neighbour and a diagonal neighbour, and the runtime
    """
    grid = Grid(n, n, cell_size, cell_size)
    mask = np.zeros(grid.shape, dtype=bool)
    goal = np.zeros(grid.shape, dtype=bool)
    centre = n // 2
    goal[centre, centre] = True

    started = time.perf_counter()
    phi = fast_march(mask, goal, unit_cost_field(grid))
    elapsed = time.perf_counter() - started

    rows, cols = np.indices(grid.shape)
    exact = np.hypot((rows - centre) * cell_size, (cols - centre) * cell_size)
    result = {
        "max_error": float(np.max(np.abs(phi.values - exact))),
        "neighbour": float(phi.values[centre, centre + 1]),
        "diagonal": float(phi.values[centre + 1, centre + 1]),
        "runtime": elapsed,
    }
    logger.debug(f"🔍 Eikonal probe n={n}: {result}")
    return result


def random_spd_lcp(n: int, rng: np.random.Generator):
    """Symmetric positive-definite M = A A^T + n I with a standard normal q"""
    a = rng.normal(size=(n, n))
    return a @ a.T + n * np.eye(n), rng.normal(size=n) * n


def lcp_probe(n: int = 8, trials: int = 1000, seed: int = 7, tol: float = 1e-12,
              max_iter: int = 10_000) -> Dict[str, float]:
    """
    PGS against active-set enumeration on seeded random SPD systems.

    Returns:
        max_deviation (inf-norm), max_fb (FB residual of the PGS solution),
        trials, and the number of runs that hit the sweep cap
    """
    rng = np.random.default_rng(seed)
    max_dev = 0.0
    max_fb = 0.0
    capped = 0
    started = time.perf_counter()
    for _ in range(trials):
        M, q = random_spd_lcp(n, rng)
        solution = pgs_solve(LcpProblem(M, q), tol=tol, max_iter=max_iter)
        exact = lcp_active_set_oracle(M, q)
        max_dev = max(max_dev, float(np.max(np.abs(solution.z - exact))))
        max_fb = max(max_fb, solution.fb_residual)
        capped += not solution.converged
    result = {"max_deviation": max_dev, "max_fb": max_fb, "trials": trials, "capped": capped,
              "runtime": time.perf_counter() - started}
    logger.debug(f"🔍 LCP probe n={n}: {result}")
    return result


def crowded_field(n: int, ratio: float, rho_max: float, speed: float = 1.44,
                  cell_size: float = 1.0):
    """
    Gaussian crowd peaking at ratio * rho_max with velocities converging on
    the centre; returns (density, velocity).
    """
    grid = Grid(n, n, cell_size, cell_size)
    cx, cy = grid.centers()
    mid = n * cell_size / 2.0
    dx, dy = cx - mid, cy - mid
    sigma = n * cell_size / 6.0
    rho = ratio * rho_max * np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
    dist = np.hypot(dx, dy)
    dist[dist == 0] = 1.0
    vx = -speed * dx / dist
    vy = -speed * dy / dist
    return ScalarField(grid, rho), VectorField(ScalarField(grid, vx), ScalarField(grid, vy))


def crowded_lcp_probe(ratio: float, n: int = 48, dt: float = 0.05,
                      params: Optional[PressureParams] = None, tol: float = 1e-9,
                      max_iter: Optional[int] = None):
    """Assemble and solve the pressure LCP on a converging crowd (no obstacles)"""
    params = params or PressureParams()
    rho, v = crowded_field(n, ratio, params.max_density, params.speed_max)
    prob = build_lcp(rho, v, params, dt)
    return prob, pgs_solve(prob, tol=tol, max_iter=max_iter)


def porous_medium_step(rho: ScalarField, dt: float) -> ScalarField:
    """
    One explicit step of rho_t = div(rho grad rho) with walls that let no
    mass through. Face densities are arithmetic means, so sum(rho^2) cannot
    grow while dt <= min(dx, dy)^2 / (4 max rho).
    """
    g = rho.grid
    r = rho.values
    change = np.zeros_like(r)

    flux_x = 0.5 * (r[:, 1:] + r[:, :-1]) * (r[:, 1:] - r[:, :-1]) / g.dx
    change[:, :-1] += flux_x / g.dx
    change[:, 1:] -= flux_x / g.dx

    flux_y = 0.5 * (r[1:, :] + r[:-1, :]) * (r[1:, :] - r[:-1, :]) / g.dy
    change[:-1, :] += flux_y / g.dy
    change[1:, :] -= flux_y / g.dy

    return ScalarField(g, r + dt * change)


def run_lyapunov_probe(n: int = 32, steps: int = 1000, seed: int = 0, peak: float = 3.0,
                       cell_size: float = 1.0, dt: Optional[float] = None) -> pd.DataFrame:
    """
    Relax a random clustered density in a closed box and record
    F = sum rho^2 dA each step.

    Returns:
        Table with columns step, t, lyapunov, mass
    """
    rng = np.random.default_rng(seed)
    grid = Grid(n, n, cell_size, cell_size)
    cx, cy = grid.centers()
    values = np.zeros(grid.shape)
    for centre in rng.uniform(0.2, 0.8, size=(3, 2)) * n * cell_size:
        values += np.exp(-((cx - centre[0]) ** 2 + (cy - centre[1]) ** 2) / (2.0 * (n * cell_size / 10.0) ** 2))
    rho = ScalarField(grid, peak * values / values.max())
    if dt is None:
        dt = 0.2 * cell_size ** 2 / peak

    rows = []
    for k in range(steps + 1):
        rows.append({"step": k, "t": k * dt, "lyapunov": lyapunov_value(rho, rho),
                     "mass": float(rho.values.sum() * grid.cell_area)})
        if k < steps:
            rho = porous_medium_step(rho, dt)
    series = pd.DataFrame(rows)
    logger.debug(f"📊 Lyapunov probe: F {series['lyapunov'].iloc[0]:.4f} -> {series['lyapunov'].iloc[-1]:.4f}")
    return series

