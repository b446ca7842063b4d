# modules/eikonal.py
"""
Potential planner: speed, discomfort and unit-cost fields, the fast marching
solve of the Eikonal equation, and particle velocities from the potential
gradient.

Edge layers follow modules.fields: EAST, NORTH, WEST, SOUTH.
"""

import heapq
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.ndimage import distance_transform_edt

from modules.fields import (
    DIRECTIONS,
    EAST,
    NEIGHBOUR_OFFSETS,
    NORTH,
    SOUTH,
    WEST,
    EdgeField,
    ScalarField,
    VectorField,
    bilinear_sample,
    cutoff_L,
)
from modules.scene import Grid, SceneSpec
from utils.logger import get_logger
from utils.utility import EikonalError, as_points

logger = get_logger(__name__)

INF = np.inf

UNKNOWN, CANDIDATE, KNOWN = 0, 1, 2

RANDOM_DIRECTION_TRIES = 8


@dataclass(frozen=True)
class SpeedParams:
    speed_max: float = 1.44
    speed_min: float = 0.2
    look_ahead: float = 1.0
    density_min: float = 0.5
    density_max: float = 2.73


@dataclass(frozen=True)
class DiscomfortParams:
    obstacle_clearance: float = 1.0
    look_ahead: float = 1.0
    density_min: float = 0.5
    density_max: float = 2.73


@dataclass(frozen=True)
class CostWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0


@dataclass
class SpeedField:
    edges: EdgeField
    params: SpeedParams

    @property
    def grid(self) -> Grid:
        return self.edges.grid

    def sample(self, points) -> np.ndarray:
        """(n, 4) directional speeds at arbitrary points"""
        return np.column_stack([
            bilinear_sample(ScalarField(self.grid, self.edges.values[d]), points) for d in range(4)
        ])


@dataclass
class DiscomfortField:
    grid: Grid
    obstacle_part: np.ndarray
    density_part: np.ndarray

    @property
    def values(self) -> np.ndarray:
        """(4, ny, nx) discomfort toward each edge direction"""
        return self.obstacle_part[None] + self.density_part

    def layer(self, direction: int) -> ScalarField:
        return ScalarField(self.grid, self.obstacle_part + self.density_part[direction])


@dataclass
class UnitCostField:
    edges: EdgeField
    weights: CostWeights

    @property
    def grid(self) -> Grid:
        return self.edges.grid


@dataclass
class PotentialField:
    grid: Grid
    values: np.ndarray
    status: np.ndarray
    monotonicity_violations: int = 0

    def as_field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)

    def is_finite(self) -> np.ndarray:
        return np.isfinite(self.values)


def look_ahead_density(rho: ScalarField, look_ahead: float) -> np.ndarray:
    """
    rho(x + r n_theta) at every cell centre for the four edge directions.

    The look-ahead point is clipped to the domain before sampling.
    """
    grid = rho.grid
    centres = grid.center_points()
    layers = np.empty((4,) + grid.shape)
    for d, direction in enumerate(DIRECTIONS):
        ahead = centres + look_ahead * direction
        ahead[:, 0] = np.clip(ahead[:, 0], 0.0, grid.width)
        ahead[:, 1] = np.clip(ahead[:, 1], 0.0, grid.height)
        layers[d] = bilinear_sample(rho, ahead).reshape(grid.shape)
    return layers


def compute_speed_field(rho: ScalarField, params: SpeedParams) -> SpeedField:
    """Anisotropic maximum speed f(x, theta) = f_max + L(rho(x + r n_theta)) (f_min - f_max)"""
    weight = cutoff_L(params.density_min, params.density_max, look_ahead_density(rho, params.look_ahead))
    layers = params.speed_max + weight * (params.speed_min - params.speed_max)
    return SpeedField(EdgeField(rho.grid, layers), params)


def compute_discomfort(rho: ScalarField, mask: np.ndarray, params: DiscomfortParams) -> DiscomfortField:
    """
    Discomfort g = g_obs + g_dens.

    g_obs is 1 on obstacle cells and on cells whose centre lies within the
    clearance radius of an obstacle cell centre. g_dens = L(rho(x + r n_theta))
    per edge direction, sampled at the same look-ahead point as the speed.
    """
    grid = rho.grid
    mask = np.asarray(mask, dtype=bool)
    if mask.any():
        distance = distance_transform_edt(~mask, sampling=(grid.dy, grid.dx))
        g_obs = (distance <= params.obstacle_clearance + 1e-9).astype(float)
    else:
        g_obs = np.zeros(grid.shape)
    g_dens = cutoff_L(params.density_min, params.density_max, look_ahead_density(rho, params.look_ahead))
    return DiscomfortField(grid, g_obs, np.asarray(g_dens, dtype=float))


def compute_unit_cost(f: SpeedField, g: DiscomfortField, weights: CostWeights,
                      mask: Optional[np.ndarray] = None) -> UnitCostField:
    """
    Unit walking cost u = (alpha f + beta + gamma g) / f per edge.

    Leaving a cell toward theta uses that cell's speed and density discomfort
    toward theta and the obstacle discomfort of the neighbour across the edge
    (the cell's own at the domain edge). Obstacle cells carry the inf sentinel
    on every edge.
    """
    grid = f.grid
    padded = np.pad(g.obstacle_part, 1, mode="edge")
    layers = np.empty((4,) + grid.shape)
    for d, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
        g_dest = padded[1 + dr:1 + dr + grid.ny, 1 + dc:1 + dc + grid.nx] + g.density_part[d]
        speed = f.edges.values[d]
        layers[d] = (weights.alpha * speed + weights.beta + weights.gamma * g_dest) / speed
    if mask is not None:
        layers[:, np.asarray(mask, dtype=bool)] = INF
    return UnitCostField(EdgeField(grid, layers), weights)


def _axis_candidate(values, status, u, r, c, grid, first, second):
    """Best KNOWN neighbour along one axis: (potential, edge cost) or None."""
    best = None
    for d in (first, second):
        dr, dc = NEIGHBOUR_OFFSETS[d]
        rr, cc = r + dr, c + dc
        if not (0 <= rr < grid.ny and 0 <= cc < grid.nx):
            continue
        if status[rr, cc] != KNOWN:
            continue
        potential = values[rr, cc]
        cost = u[d, r, c]
        if not (math.isfinite(potential) and math.isfinite(cost)):
            continue
        step = grid.dx if d in (EAST, WEST) else grid.dy
        cost = cost * step
        if best is None or potential + cost < best[0] + best[1]:
            best = (potential, cost)
    return best


def solve_upwind(hp: Optional[float], hc: Optional[float], vp: Optional[float], vc: Optional[float]) -> float:
    """
    Largest root of ((r - hp)/hc)^2 + ((r - vp)/vc)^2 = 1.

    A missing axis (None) reduces the update to p + cost along the other one.
    Falls back to the one-axis update when the quadratic has no admissible root.
    """
    if hp is None and vp is None:
        raise EikonalError("No finite upwind neighbour")
    if vp is None:
        return hp + hc
    if hp is None:
        return vp + vc

    a = 1.0 / hc ** 2 + 1.0 / vc ** 2
    b = -2.0 * (hp / hc ** 2 + vp / vc ** 2)
    c = (hp / hc) ** 2 + (vp / vc) ** 2 - 1.0
    disc = b * b - 4.0 * a * c
    fallback = min(hp + hc, vp + vc)
    if disc < 0:
        return fallback
    root_disc = math.sqrt(disc)
    denom = -b - root_disc
    if abs(denom) < 1e-12:
        r = (-b + root_disc) / (2.0 * a)
    else:
        r = 2.0 * c / denom
    if r < max(hp, vp):
        return fallback
    return r


def compute_new_potential(i: int, j: int, phi: PotentialField, u: UnitCostField) -> float:
    """
    Upwind potential of cell (i, j) from its KNOWN neighbours.

    Args:
        i, j: 1-based cell index
        phi: potential with current status flags
        u: unit cost per edge

    Raises:
        EikonalError: no KNOWN neighbour with finite potential
    """
    return _cell_update(j - 1, i - 1, phi.values, phi.status, u.edges.values, phi.grid)


def _cell_update(r, c, values, status, u, grid) -> float:
    horizontal = _axis_candidate(values, status, u, r, c, grid, EAST, WEST)
    vertical = _axis_candidate(values, status, u, r, c, grid, NORTH, SOUTH)
    hp, hc = horizontal if horizontal else (None, None)
    vp, vc = vertical if vertical else (None, None)
    return solve_upwind(hp, hc, vp, vc)


def fast_march(mask: np.ndarray, goal: np.ndarray, u: UnitCostField, strict: bool = False) -> PotentialField:
    """
    Solve the Eikonal equation by fast marching.

    Goal cells start KNOWN at 0 and obstacle cells KNOWN at inf. Candidates
    live in a min-heap of (value, flat index); entries are never updated in
    place and stale ones are skipped when popped. Cells never reached keep inf.

    Args:
        mask: obstacle cells, (N_y, N_x)
        goal: goal cells, (N_y, N_x)
        u: unit cost per edge
        strict: raise when the promotion order decreases by more than 1e-9

    Returns:
        Marched potential

    Raises:
        EikonalError: empty goal, or a monotonicity violation in strict mode
    """
    grid = u.grid
    mask = np.asarray(mask, dtype=bool)
    goal = np.asarray(goal, dtype=bool) & ~mask
    if not goal.any():
        raise EikonalError("Goal region is empty (no free cell centre inside an exit)")

    values = np.full(grid.shape, INF)
    status = np.full(grid.shape, UNKNOWN, dtype=np.int8)
    values[goal] = 0.0
    status[goal] = KNOWN
    status[mask] = KNOWN
    costs = u.edges.values

    heap = []

    def relax_neighbours(r, c):
        for dr, dc in NEIGHBOUR_OFFSETS:
            rr, cc = r + dr, c + dc
            if not (0 <= rr < grid.ny and 0 <= cc < grid.nx) or status[rr, cc] == KNOWN:
                continue
            try:
                candidate = _cell_update(rr, cc, values, status, costs, grid)
            except EikonalError:
                continue
            if candidate < values[rr, cc]:
                values[rr, cc] = candidate
                status[rr, cc] = CANDIDATE
                heapq.heappush(heap, (candidate, rr * grid.nx + cc))

    for flat in np.flatnonzero(goal):
        relax_neighbours(*divmod(int(flat), grid.nx))

    last = 0.0
    violations = 0
    while heap:
        value, flat = heapq.heappop(heap)
        r, c = divmod(flat, grid.nx)
        if status[r, c] == KNOWN or value != values[r, c]:
            continue
        if value < last - 1e-9:
            violations += 1
            if strict:
                raise EikonalError(f"Fast marching promoted {value} after {last}")
        last = max(last, value)
        status[r, c] = KNOWN
        relax_neighbours(r, c)

    if violations:
        logger.warning(f"⚠️ Fast marching promoted {violations} cells out of order")
    return PotentialField(grid, values, status, violations)


def potential_gradient(phi: PotentialField) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradient of the potential on finite cells.

    Central differences where both neighbours are finite, one-sided next to
    inf cells or the domain edge, zero on inf cells.
    """
    grid = phi.grid
    v = phi.values
    finite = np.isfinite(v)
    safe = np.where(finite, v, 0.0)

    def axis_gradient(axis: int, step: float) -> np.ndarray:
        fwd_ok = np.zeros_like(finite)
        bwd_ok = np.zeros_like(finite)
        fwd = np.zeros_like(safe)
        bwd = np.zeros_like(safe)
        if axis == 1:
            fwd_ok[:, :-1] = finite[:, 1:]
            bwd_ok[:, 1:] = finite[:, :-1]
            fwd[:, :-1] = safe[:, 1:]
            bwd[:, 1:] = safe[:, :-1]
        else:
            fwd_ok[:-1, :] = finite[1:, :]
            bwd_ok[1:, :] = finite[:-1, :]
            fwd[:-1, :] = safe[1:, :]
            bwd[1:, :] = safe[:-1, :]
        grad = np.zeros_like(safe)
        both = fwd_ok & bwd_ok
        only_fwd = fwd_ok & ~bwd_ok
        only_bwd = bwd_ok & ~fwd_ok
        grad[both] = (fwd[both] - bwd[both]) / (2.0 * step)
        grad[only_fwd] = (fwd[only_fwd] - safe[only_fwd]) / step
        grad[only_bwd] = (safe[only_bwd] - bwd[only_bwd]) / step
        grad[~finite] = 0.0
        return grad

    return axis_gradient(1, grid.dx), axis_gradient(0, grid.dy)


def random_free_directions(positions: np.ndarray, step: np.ndarray, scene: Optional[SceneSpec], rng) -> np.ndarray:
    """Seeded random unit directions whose step does not end in an obstacle"""
    out = np.zeros((len(positions), 2))
    for k, (x, s) in enumerate(zip(positions, step)):
        for _ in range(RANDOM_DIRECTION_TRIES):
            angle = rng.uniform(0.0, 2.0 * math.pi)
            direction = np.array([math.cos(angle), math.sin(angle)])
            if scene is None:
                break
            target = x + s * direction
            if scene.in_domain(target)[0] and not scene.in_obstacle(target)[0]:
                break
        out[k] = direction
    return out


def potential_velocity(positions: np.ndarray, phi: PotentialField, f: SpeedField, rng,
                       stalled: Optional[np.ndarray] = None, scene: Optional[SceneSpec] = None,
                       dt: float = 0.0) -> np.ndarray:
    """
    Velocities -f(x, theta) grad(phi)/|grad(phi)| at the particle positions.

    The speed along a unit direction d is d_x^2 f_east|west + d_y^2 f_north|south.
    Particles with a vanishing gradient, or flagged as stalled, move in a
    seeded random unobstructed direction at the local speed.

    Args:
        positions: (n, 2)
        phi: marched potential
        f: anisotropic speed field
        rng: numpy Generator
        stalled: optional boolean flags forcing a random direction
        scene: used to reject random directions that hit obstacles
        dt: step length for that rejection test

    Returns:
        (n, 2) velocities
    """
    positions = as_points(positions) if len(positions) else np.empty((0, 2))
    if len(positions) == 0:
        return np.empty((0, 2))
    gx, gy = potential_gradient(phi)
    grad = bilinear_sample(VectorField(ScalarField(phi.grid, gx), ScalarField(phi.grid, gy)), positions)
    norm = np.hypot(grad[:, 0], grad[:, 1])
    direction = np.zeros_like(grad)
    moving = norm > 1e-12
    direction[moving] = -grad[moving] / norm[moving, None]

    speeds = f.sample(positions)
    random_mask = ~moving
    if stalled is not None:
        random_mask |= np.asarray(stalled, dtype=bool)
    if random_mask.any():
        local = speeds.mean(axis=1)[random_mask]
        direction[random_mask] = random_free_directions(positions[random_mask], local * dt, scene, rng)

    along_x = np.where(direction[:, 0] >= 0, speeds[:, EAST], speeds[:, WEST])
    along_y = np.where(direction[:, 1] >= 0, speeds[:, NORTH], speeds[:, SOUTH])
    speed = direction[:, 0] ** 2 * along_x + direction[:, 1] ** 2 * along_y
    return direction * speed[:, None]


def static_potential(grid: Grid, mask: np.ndarray, goal: np.ndarray) -> PotentialField:
    """Density-free distance potential (unit cost) used for planned travel times"""
    unit = np.ones((4,) + grid.shape)
    unit[:, mask] = INF
    return fast_march(mask, goal, UnitCostField(EdgeField(grid, unit), CostWeights(1.0, 0.0, 0.0)))
