# modules/scene.py
"""
Simulation domain: the rectangular area, its obstacles, entrances and exits,
plus the cell grid laid over it.

Cells are 1-based and Cartesian from the bottom-left corner. Field arrays
elsewhere in the package are shaped (N_y, N_x) and indexed [j-1, i-1], so a
C-order flatten matches the flat index i + (j-1)*N_x (minus one, 0-based).
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from utils.logger import get_logger
from utils.utility import (
    OutOfDomainError,
    ScenarioParseError,
    SceneValidationError,
    as_points,
)

logger = get_logger(__name__)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by its min and max corner"""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise SceneValidationError(
                f"Rect min corner must not exceed max corner: {self.as_list()}"
            )

    @classmethod
    def from_list(cls, values) -> "Rect":
        if len(values) != 4:
            raise ScenarioParseError(f"Rect needs 4 numbers [x0,y0,x1,y1], got {values!r}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> List[float]:
        return [self.x0, self.y0, self.x1, self.y1]

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def corners(self) -> List[Tuple[float, float]]:
        return [(self.x0, self.y0), (self.x1, self.y0), (self.x1, self.y1), (self.x0, self.y1)]

    def contains(self, points, closed: bool = True) -> np.ndarray:
        """Boolean mask of points inside the rect (closed or open interior)."""
        pts = as_points(points)
        x, y = pts[:, 0], pts[:, 1]
        if closed:
            return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)
        return (x > self.x0) & (x < self.x1) & (y > self.y0) & (y < self.y1)

    def inflate(self, margin: float) -> "Rect":
        return Rect(self.x0 - margin, self.y0 - margin, self.x1 + margin, self.y1 + margin)

    def clip(self, other: "Rect") -> "Rect":
        """Intersection with ``other``; collapses to a degenerate rect when disjoint."""
        x0, y0 = max(self.x0, other.x0), max(self.y0, other.y0)
        x1, y1 = min(self.x1, other.x1), min(self.y1, other.y1)
        return Rect(x0, y0, max(x0, x1), max(y0, y1))

    def interiors_intersect(self, other: "Rect") -> bool:
        return (min(self.x1, other.x1) > max(self.x0, other.x0)
                and min(self.y1, other.y1) > max(self.y0, other.y0))


@dataclass(frozen=True)
class Entrance:
    rect: Rect
    rate: float
    capacity: Optional[int] = None


@dataclass(frozen=True)
class Exit:
    rect: Rect
    cap: Optional[float] = None

    def edge(self, bounds: Rect) -> Optional[Tuple[Tuple[float, float], Tuple[float, float]]]:
        """Side of the exit on the domain boundary (the longest when several are); None inside the domain"""
        r = self.rect
        sides = (
            (r.x1 == bounds.x1, (r.x1, r.y0), (r.x1, r.y1)),
            (r.y1 == bounds.y1, (r.x0, r.y1), (r.x1, r.y1)),
            (r.x0 == bounds.x0, (r.x0, r.y0), (r.x0, r.y1)),
            (r.y0 == bounds.y0, (r.x0, r.y0), (r.x1, r.y0)),
        )
        on_wall = [(a, b) for flag, a, b in sides if flag]
        if not on_wall:
            return None
        return max(on_wall, key=lambda s: math.dist(*s))

    def anchors(self, bounds: Rect) -> List[Tuple[float, float]]:
        """Goal points of the graph planner: the ends and midpoint of the exit edge"""
        edge = self.edge(bounds)
        if edge is None:
            return [self.rect.center] + self.rect.corners()
        (ax, ay), (bx, by) = edge
        return [(ax, ay), (bx, by), ((ax + bx) / 2.0, (ay + by) / 2.0)]


@dataclass(frozen=True)
class SceneSpec:
    """Rectangular domain [0, width] x [0, height] with its inhomogeneities"""

    width: float
    height: float
    obstacles: Tuple[Rect, ...] = field(default_factory=tuple)
    entrances: Tuple[Entrance, ...] = field(default_factory=tuple)
    exits: Tuple[Exit, ...] = field(default_factory=tuple)
    name: str = "scene"

    @property
    def bounds(self) -> Rect:
        return Rect(0.0, 0.0, self.width, self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    def obstacle_fraction(self) -> float:
        """Share of the domain covered by obstacles (obstacles assumed disjoint)"""
        return sum(o.area for o in self.obstacles) / self.area

    def in_domain(self, points) -> np.ndarray:
        return self.bounds.contains(points, closed=True)

    def in_obstacle(self, points) -> np.ndarray:
        """True where a point lies in the open interior of an obstacle"""
        pts = as_points(points)
        mask = np.zeros(len(pts), dtype=bool)
        for obstacle in self.obstacles:
            mask |= obstacle.contains(pts, closed=False)
        return mask

    def in_exit(self, points) -> np.ndarray:
        pts = as_points(points)
        mask = np.zeros(len(pts), dtype=bool)
        for ex in self.exits:
            mask |= ex.rect.contains(pts, closed=True)
        return mask

    def in_entrance(self, points) -> np.ndarray:
        pts = as_points(points)
        mask = np.zeros(len(pts), dtype=bool)
        for entrance in self.entrances:
            mask |= entrance.rect.contains(pts, closed=True)
        return mask

    def is_free(self, points) -> np.ndarray:
        """Domain minus obstacles, entrances and exits (where spawning is allowed)"""
        pts = as_points(points)
        return (self.in_domain(pts) & ~self.in_obstacle(pts)
                & ~self.in_entrance(pts) & ~self.in_exit(pts))

    def validate(self) -> "SceneSpec":
        """
        Check the scene invariants.

        Raises:
            SceneValidationError: first violated invariant
        """
        if not (self.width > 0 and self.height > 0):
            raise SceneValidationError(f"Domain size must be positive, got {self.width}x{self.height}")

        bounds = self.bounds
        named = ([("obstacle", i, o) for i, o in enumerate(self.obstacles)]
                 + [("entrance", i, e.rect) for i, e in enumerate(self.entrances)]
                 + [("exit", i, x.rect) for i, x in enumerate(self.exits)])
        for kind, idx, rect in named:
            if rect.x0 < 0 or rect.y0 < 0 or rect.x1 > bounds.x1 or rect.y1 > bounds.y1:
                raise SceneValidationError(
                    f"{kind} {idx} {rect.as_list()} lies outside the {self.width}x{self.height} domain"
                )

        for i, entrance in enumerate(self.entrances):
            if entrance.rate < 0:
                raise SceneValidationError(f"entrance {i} has negative rate {entrance.rate}")
            if entrance.capacity is not None and entrance.capacity < 0:
                raise SceneValidationError(f"entrance {i} has negative capacity")
        for i, ex in enumerate(self.exits):
            if ex.cap is not None and ex.cap <= 0:
                raise SceneValidationError(f"exit {i} has non-positive outflow cap {ex.cap}")

        for kind, idx, rect in named:
            if kind == "obstacle":
                continue
            for j, obstacle in enumerate(self.obstacles):
                if rect.interiors_intersect(obstacle):
                    raise SceneValidationError(f"{kind} {idx} overlaps obstacle {j}")
        return self

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "obstacles": [o.as_list() for o in self.obstacles],
            "entrances": [{"rect": e.rect.as_list(), "rate": e.rate, "capacity": e.capacity}
                          for e in self.entrances],
            "exits": [{"rect": x.rect.as_list(), "cap": x.cap} for x in self.exits],
        }


@dataclass(frozen=True)
class Grid:
    """Uniform cell grid tiling the domain exactly"""

    nx: int
    ny: int
    dx: float
    dy: float

    @classmethod
    def for_scene(cls, scene: SceneSpec, cell_size: float) -> "Grid":
        """Grid whose cells are as close to ``cell_size`` as an exact tiling allows"""
        nx = max(1, int(round(scene.width / cell_size)))
        ny = max(1, int(round(scene.height / cell_size)))
        return cls(nx=nx, ny=ny, dx=scene.width / nx, dy=scene.height / ny)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def height(self) -> float:
        return self.ny * self.dy

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def flatten(self, i: int, j: int) -> int:
        """1-based flat index i + (j-1)*N_x"""
        return i + (j - 1) * self.nx

    def unflatten(self, k: int) -> Tuple[int, int]:
        j, i = divmod(k - 1, self.nx)
        return (i + 1, j + 1)

    def cell_rect(self, i: int, j: int) -> Rect:
        return Rect((i - 1) * self.dx, (j - 1) * self.dy, i * self.dx, j * self.dy)

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate arrays, each shaped (N_y, N_x)"""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(xs, ys)

    def center_points(self) -> np.ndarray:
        cx, cy = self.centers()
        return np.column_stack([cx.ravel(), cy.ravel()])


def cell_of_point(p, grid: Grid) -> Tuple[int, int]:
    """
    Cell containing a point under the half-open convention.

    Cells are [x_lo, x_hi) x [y_lo, y_hi); the top and right domain
    boundaries belong to the last row and column.

    Args:
        p: (x, y) position in metres
        grid: Grid over the domain

    Returns:
        1-based (i, j)

    Raises:
        OutOfDomainError: p lies outside the domain
    """
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= grid.width and 0.0 <= y <= grid.height) or math.isnan(x) or math.isnan(y):
        raise OutOfDomainError(f"Point ({x}, {y}) outside domain {grid.width}x{grid.height}")
    i = min(int(math.floor(x / grid.dx)) + 1, grid.nx)
    j = min(int(math.floor(y / grid.dy)) + 1, grid.ny)
    return (i, j)


def cells_of_points(points: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised cell_of_point returning 0-based (column, row) arrays, clamped to the grid."""
    pts = as_points(points)
    col = np.clip(np.floor(pts[:, 0] / grid.dx).astype(int), 0, grid.nx - 1)
    row = np.clip(np.floor(pts[:, 1] / grid.dy).astype(int), 0, grid.ny - 1)
    return col, row


def obstacle_cell_mask(scene: SceneSpec, grid: Grid) -> np.ndarray:
    """
    Snap obstacles to the grid.

    A cell is covered iff its centre lies inside an obstacle (closed rect).

    Returns:
        Boolean array shaped (N_y, N_x)
    """
    cx, cy = grid.centers()
    mask = np.zeros(grid.shape, dtype=bool)
    for obstacle in scene.obstacles:
        mask |= (cx >= obstacle.x0) & (cx <= obstacle.x1) & (cy >= obstacle.y0) & (cy <= obstacle.y1)
    return mask


def exit_cell_mask(scene: SceneSpec, grid: Grid) -> np.ndarray:
    """Cells whose centre lies inside an exit; the goal set of the potential planner"""
    cx, cy = grid.centers()
    mask = np.zeros(grid.shape, dtype=bool)
    for ex in scene.exits:
        r = ex.rect
        mask |= (cx >= r.x0) & (cx <= r.x1) & (cy >= r.y0) & (cy <= r.y1)
    return mask


def scene_from_dict(data: dict, name: str = "scene") -> SceneSpec:
    """Build and validate a SceneSpec from the scenario JSON schema."""
    try:
        width = float(data["width"])
        height = float(data["height"])
        obstacles = tuple(Rect.from_list(o) for o in data.get("obstacles", []))
        entrances = tuple(
            Entrance(
                rect=Rect.from_list(e["rect"]),
                rate=float(e.get("rate", 0.0)),
                capacity=None if e.get("capacity") is None else int(e["capacity"]),
            )
            for e in data.get("entrances", [])
        )
        exits = tuple(
            Exit(rect=Rect.from_list(x["rect"]),
                 cap=None if x.get("cap") is None else float(x["cap"]))
            for x in data.get("exits", [])
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioParseError(f"Scenario does not match the schema: {e!r}") from e

    scene = SceneSpec(width=width, height=height, obstacles=obstacles,
                      entrances=entrances, exits=exits, name=name)
    return scene.validate()


def load_scenario(path: Union[str, Path]) -> SceneSpec:
    """
    Load and validate a scenario file.

    Args:
        path: JSON scenario file

    Returns:
        Validated SceneSpec

    Raises:
        ScenarioParseError: file missing or malformed
        SceneValidationError: geometry violates the scene invariants
    """
    path = Path(path)
    if not path.is_file():
        raise ScenarioParseError(f"Scenario file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"Malformed scenario file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ScenarioParseError(f"Scenario file {path} must hold a JSON object")

    scene = scene_from_dict(data, name=path.stem)
    logger.info(
        f"🗺️  Loaded scene '{scene.name}': {scene.width}x{scene.height} m, "
        f"{len(scene.obstacles)} obstacles, {len(scene.entrances)} entrances, {len(scene.exits)} exits"
    )
    return scene
