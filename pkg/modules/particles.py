# modules/particles.py
"""
Microscopic state of the crowd: spawning, Poisson inflow, explicit Euler
stepping with obstacle and exit handling, velocity noise and the
minimum-distance bookkeeping.

Particle ids are array indices. Exited particles stay in the arrays with
``active`` cleared, so ids remain stable for the whole run.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from modules.scene import Entrance, Exit, Rect, SceneSpec
from utils.logger import get_logger
from utils.utility import ConfigError, SpawnError

logger = get_logger(__name__)

MIN_SPEED = 0.05
SPAWN_BATCH_LIMIT = 200


class RngState:
    """Seeded generator; equal seeds give identical draw sequences"""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.generator = np.random.default_rng(self.seed)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed})"


def _generator(rng: Union[RngState, np.random.Generator]) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngState) else rng


@dataclass(frozen=True)
class SpeedDistribution:
    """Per-particle maximum walking speed"""

    kind: str = "normal"
    mean: float = 1.44
    std: float = 0.15
    low: float = 1.0
    high: float = 2.0

    def draw(self, n: int, rng) -> np.ndarray:
        gen = _generator(rng)
        if self.kind == "normal":
            speeds = gen.normal(self.mean, self.std, size=n)
        elif self.kind == "uniform":
            speeds = gen.uniform(self.low, self.high, size=n)
        elif self.kind == "constant":
            speeds = np.full(n, float(self.mean))
        else:
            raise ConfigError(f"Unknown speed distribution {self.kind!r}")
        return np.maximum(speeds, MIN_SPEED)


@dataclass
class ParticleSet:
    positions: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    velocities: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    max_speeds: np.ndarray = field(default_factory=lambda: np.empty(0))
    masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    active: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.max_speeds = np.asarray(self.max_speeds, dtype=float).reshape(-1)
        self.masses = np.asarray(self.masses, dtype=float).reshape(-1)
        self.active = np.asarray(self.active, dtype=bool).reshape(-1)
        lengths = {len(self.velocities), len(self.max_speeds), len(self.masses), len(self.active)}
        if lengths != {n}:
            raise ValueError("ParticleSet arrays must share one length")

    @classmethod
    def create(cls, positions, max_speeds, masses: Union[float, np.ndarray] = 1.0,
               velocities=None) -> "ParticleSet":
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = len(positions)
        return cls(
            positions=positions,
            velocities=np.zeros((n, 2)) if velocities is None else velocities,
            max_speeds=np.broadcast_to(np.asarray(max_speeds, dtype=float), (n,)).copy(),
            masses=np.broadcast_to(np.asarray(masses, dtype=float), (n,)).copy(),
            active=np.ones(n, dtype=bool),
        )

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def active_ids(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def extend(self, other: "ParticleSet") -> np.ndarray:
        """Append particles in place and return their new ids"""
        start = len(self)
        self.positions = np.vstack([self.positions, other.positions])
        self.velocities = np.vstack([self.velocities, other.velocities])
        self.max_speeds = np.concatenate([self.max_speeds, other.max_speeds])
        self.masses = np.concatenate([self.masses, other.masses])
        self.active = np.concatenate([self.active, other.active])
        return np.arange(start, len(self))

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.positions.copy(), self.velocities.copy(), self.max_speeds.copy(),
                           self.masses.copy(), self.active.copy())


def _rejection_sample(n: int, bounds: Rect, accept, rng, what: str) -> np.ndarray:
    gen = _generator(rng)
    accepted = []
    total = 0
    batch = max(2 * n, 64)
    for _ in range(SPAWN_BATCH_LIMIT):
        if total >= n:
            break
        xs = gen.uniform(bounds.x0, bounds.x1, size=batch)
        ys = gen.uniform(bounds.y0, bounds.y1, size=batch)
        pts = np.column_stack([xs, ys])
        pts = pts[accept(pts)]
        accepted.append(pts)
        total += len(pts)
    if total < n:
        raise SpawnError(f"Could not place {n} particles in {what}: free area empty or too small")
    return np.vstack(accepted)[:n]


def spawn_uniform(n: int, scene: SceneSpec, rng, speeds: Optional[SpeedDistribution] = None,
                  mass: float = 1.0) -> ParticleSet:
    """
    Place n particles i.i.d. uniformly over the free area by rejection sampling.

    The free area is the domain minus obstacles, entrances and exits.

    Raises:
        SpawnError: the free area is empty
    """
    if n <= 0:
        return ParticleSet()
    pts = _rejection_sample(n, scene.bounds, scene.is_free, rng, "the free domain")
    speeds = speeds or SpeedDistribution()
    return ParticleSet.create(pts, speeds.draw(n, rng), mass)


def spawn_in_rect(n: int, rect: Rect, scene: SceneSpec, rng,
                  speeds: Optional[SpeedDistribution] = None, mass: float = 1.0) -> ParticleSet:
    """Uniform placement restricted to the free part of ``rect``"""
    if n <= 0:
        return ParticleSet()
    region = rect.clip(scene.bounds)
    pts = _rejection_sample(n, region, scene.is_free, rng, f"rect {rect.as_list()}")
    speeds = speeds or SpeedDistribution()
    return ParticleSet.create(pts, speeds.draw(n, rng), mass)


def spawn_disc(n: int, center: Sequence[float], radius: float, scene: SceneSpec, rng,
               speeds: Optional[SpeedDistribution] = None, mass: float = 1.0) -> ParticleSet:
    """Uniform placement in the free part of a disc, for dense localised crowds"""
    if n <= 0:
        return ParticleSet()
    cx, cy = float(center[0]), float(center[1])
    box = Rect(cx - radius, cy - radius, cx + radius, cy + radius).clip(scene.bounds)

    def accept(pts):
        inside = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) <= radius
        return inside & scene.is_free(pts)

    pts = _rejection_sample(n, box, accept, rng, f"disc at ({cx}, {cy}) r={radius}")
    speeds = speeds or SpeedDistribution()
    return ParticleSet.create(pts, speeds.draw(n, rng), mass)


def poisson_inflow(entrance: Entrance, dt: float, rng, spawned_so_far: int = 0) -> int:
    """
    Number of arrivals at an entrance during one step.

    Draws Poisson(rate * dt) and truncates it by the entrance's remaining
    capacity.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if entrance.rate <= 0:
        return 0
    count = int(_generator(rng).poisson(entrance.rate * dt))
    if entrance.capacity is not None:
        count = min(count, max(entrance.capacity - spawned_so_far, 0))
    return count


def place_in_entrance(entrance: Entrance, count: int, rng) -> np.ndarray:
    """Uniform positions inside the entrance rectangle"""
    gen = _generator(rng)
    r = entrance.rect
    return np.column_stack([gen.uniform(r.x0, r.x1, size=count), gen.uniform(r.y0, r.y1, size=count)])


class InflowState:
    """Per-entrance arrival counters honouring finite capacities"""

    def __init__(self, scene: SceneSpec):
        self.entrances = list(scene.entrances)
        self.spawned = [0] * len(self.entrances)

    @property
    def exhausted(self) -> bool:
        """No entrance can produce another arrival"""
        for k, entrance in enumerate(self.entrances):
            if entrance.rate <= 0:
                continue
            if entrance.capacity is None or self.spawned[k] < entrance.capacity:
                return False
        return True

    @property
    def total_spawned(self) -> int:
        return sum(self.spawned)

    def step(self, dt: float, rng, speeds: SpeedDistribution, mass: float = 1.0) -> ParticleSet:
        """Draw this step's arrivals at every entrance, in entrance order"""
        batches = []
        for k, entrance in enumerate(self.entrances):
            count = poisson_inflow(entrance, dt, rng, self.spawned[k])
            if count == 0:
                continue
            self.spawned[k] += count
            pts = place_in_entrance(entrance, count, rng)
            batches.append(ParticleSet.create(pts, speeds.draw(count, rng), mass))
        if not batches:
            return ParticleSet()
        merged = batches[0]
        for batch in batches[1:]:
            merged.extend(batch)
        return merged


def _obstacle_entry(start: np.ndarray, disp: np.ndarray, rect: Rect):
    """
    Parameter t in [0, 1] at which each segment start + t*disp enters the open
    interior of ``rect`` (inf when it never does) and the entry axis.
    """
    n = len(start)
    t_lo = np.full((n, 2), -np.inf)
    t_hi = np.full((n, 2), np.inf)
    valid = np.ones(n, dtype=bool)
    for axis, (lo, hi) in enumerate(((rect.x0, rect.x1), (rect.y0, rect.y1))):
        p = start[:, axis]
        d = disp[:, axis]
        moving = d != 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo - p) / d
            tb = (hi - p) / d
        t_lo[:, axis] = np.where(moving, np.minimum(ta, tb), -np.inf)
        t_hi[:, axis] = np.where(moving, np.maximum(ta, tb), np.inf)
        # a segment parallel to this axis must lie strictly inside the slab
        valid &= moving | ((p > lo) & (p < hi))
    t_enter = t_lo.max(axis=1)
    t_exit = t_hi.min(axis=1)
    axis = t_lo.argmax(axis=1)
    hits = valid & (t_enter < t_exit) & (t_enter < 1.0) & (t_exit > 0.0) & (t_enter >= 0.0)
    return np.where(hits, t_enter, np.inf), axis


def step_positions(p: ParticleSet, dt: float, scene: SceneSpec) -> Dict[int, List[int]]:
    """
    Advance active particles by one explicit Euler step, in place.

    A particle whose segment enters an obstacle stops on the face it hits.
    Positions are clamped to the domain afterwards.

    Returns:
        Exit index -> ascending ids of active particles now inside that exit
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    ids = p.active_ids()
    if len(ids) == 0:
        return {k: [] for k in range(len(scene.exits))}

    start = p.positions[ids]
    disp = p.velocities[ids] * dt
    new = start + disp

    best_t = np.full(len(ids), np.inf)
    face = np.full((len(ids), 2), np.nan)
    for obstacle in scene.obstacles:
        t, axis = _obstacle_entry(start, disp, obstacle)
        closer = t < best_t
        if not closer.any():
            continue
        best_t[closer] = t[closer]
        entry_x = np.where(disp[:, 0] > 0, obstacle.x0, obstacle.x1)
        entry_y = np.where(disp[:, 1] > 0, obstacle.y0, obstacle.y1)
        face[closer, 0] = np.where(axis[closer] == 0, entry_x[closer], np.nan)
        face[closer, 1] = np.where(axis[closer] == 1, entry_y[closer], np.nan)

    stopped = np.isfinite(best_t)
    if stopped.any():
        clamped = start[stopped] + best_t[stopped, None] * disp[stopped]
        snap = face[stopped]
        clamped = np.where(np.isnan(snap), clamped, snap)
        new[stopped] = clamped

    new[:, 0] = np.clip(new[:, 0], 0.0, scene.width)
    new[:, 1] = np.clip(new[:, 1], 0.0, scene.height)
    p.positions[ids] = new

    candidates = {}
    for k, ex in enumerate(scene.exits):
        inside = ex.rect.contains(new, closed=True)
        candidates[k] = ids[inside].tolist()
    return candidates


def apply_exit_cap(ex: Exit, candidates: List[int], dt: float, carry: float = 0.0) -> Tuple[List[int], float]:
    """
    Limit how many candidates leave through an exit this step.

    At most floor(cap*dt + carry) candidates leave, lowest ids first. The
    unused fraction of the budget carries over to the next step.

    Returns:
        (removed ids, new carry)
    """
    candidates = sorted(candidates)
    if ex.cap is None:
        return candidates, 0.0
    budget = ex.cap * dt + carry
    allowed = int(math.floor(budget + 1e-12))
    removed = candidates[:allowed]
    if len(removed) == allowed:
        new_carry = max(budget - allowed, 0.0)
    else:
        new_carry = budget - math.floor(budget + 1e-12)
    return removed, max(new_carry, 0.0)


def add_velocity_noise(p: ParticleSet, sigma: float, rng) -> ParticleSet:
    """Add N(0, sigma^2) noise per velocity component of active particles, then clamp speeds."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return p
    ids = p.active_ids()
    p.velocities[ids] += _generator(rng).normal(0.0, sigma, size=(len(ids), 2))
    clamp_speeds(p)
    return p


def clamp_speeds(p: ParticleSet) -> None:
    speed = np.hypot(p.velocities[:, 0], p.velocities[:, 1])
    too_fast = speed > p.max_speeds
    scale = np.where(too_fast, p.max_speeds / np.where(speed > 0, speed, 1.0), 1.0)
    p.velocities *= scale[:, None]


def max_density_from_min_distance(d_min: float, radius: float) -> float:
    """
    Closest-packing density 2 / ((d_min + 2r)^2 * sqrt(3)) of discs of radius r
    kept d_min apart.
    """
    if d_min < 0 or radius < 0:
        raise ConfigError(f"min distance and radius must be non-negative, got {d_min}, {radius}")
    spacing = d_min + 2.0 * radius
    if spacing <= 0:
        raise ConfigError("min distance plus particle diameter must be positive")
    return 2.0 / (spacing ** 2 * math.sqrt(3.0))


def nearest_neighbour_distances(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(positions) < 2:
        return np.full(len(positions), np.inf)
    dist, _ = cKDTree(positions).query(positions, k=2)
    return dist[:, 1]


def min_distance_report(p: ParticleSet, radii: Sequence[float]) -> Dict[float, int]:
    """
    For each radius, the number of active particles whose nearest neighbour
    is closer than that radius.
    """
    nearest = nearest_neighbour_distances(p.positions[p.active])
    return {float(r): int(np.count_nonzero(nearest < r)) for r in radii}


def correct_min_distance(p: ParticleSet, d_min: float, scene: SceneSpec, rng) -> ParticleSet:
    """
    One sweep pushing violating pairs apart to distance d_min.

    Pairs are processed in ascending (i, j) order and moved symmetrically
    along their separation. Coincident pairs separate along a random
    direction. A move that would leave the domain is clamped; one that would
    enter an obstacle is dropped for that particle.
    """
    if d_min <= 0:
        raise ValueError(f"d_min must be positive, got {d_min}")
    ids = p.active_ids()
    if len(ids) < 2:
        return p
    gen = _generator(rng)
    pos = p.positions[ids]
    pairs = cKDTree(pos).query_pairs(d_min, output_type="ndarray")
    if len(pairs) == 0:
        return p
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    for a, b in pairs:
        sep = pos[b] - pos[a]
        dist = math.hypot(sep[0], sep[1])
        if dist >= d_min:
            continue
        if dist < 1e-12:
            angle = gen.uniform(0.0, 2.0 * math.pi)
            unit = np.array([math.cos(angle), math.sin(angle)])
        else:
            unit = sep / dist
        shift = 0.5 * (d_min - dist) * unit
        for idx, moved in ((a, pos[a] - shift), (b, pos[b] + shift)):
            moved = np.array([min(max(moved[0], 0.0), scene.width), min(max(moved[1], 0.0), scene.height)])
            if not scene.in_obstacle(moved)[0]:
                pos[idx] = moved

    p.positions[ids] = pos
    return p
