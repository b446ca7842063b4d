# modules/fields.py
"""
Grid field containers and the discrete calculus used by the planners and the
pressure solver.

Differences extend the field with one layer of virtual zero cells, so boundary
cells see zero neighbours outside the domain.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from modules.scene import Grid
from utils.logger import get_logger
from utils.utility import OutOfDomainError, as_points, write_csv

logger = get_logger(__name__)

# Edge layer order: theta = 0, pi/2, pi, 3pi/2
EAST, NORTH, WEST, SOUTH = range(4)
DIRECTIONS = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
# (row, column) offset of the neighbour across each edge
NEIGHBOUR_OFFSETS = ((0, 1), (1, 0), (0, -1), (-1, 0))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"Field shape {self.values.shape} does not match grid {self.grid.shape}")

    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_flat(cls, grid: Grid, flat: np.ndarray) -> "ScalarField":
        return cls(grid, np.asarray(flat, dtype=float).reshape(grid.shape))

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def at(self, i: int, j: int) -> float:
        """Value of cell (i, j), 1-based"""
        return float(self.values[j - 1, i - 1])


@dataclass
class VectorField:
    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise ValueError("Vector field components must share one grid")

    @property
    def grid(self) -> Grid:
        return self.x.grid

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.x.values, self.y.values)


@dataclass
class EdgeField:
    """Per-direction values on the four edges of every cell, shaped (4, N_y, N_x)"""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (4,) + self.grid.shape:
            raise ValueError(f"Edge field shape {self.values.shape} does not match grid")

    def layer(self, direction: int) -> np.ndarray:
        return self.values[direction]


def _padded(values: np.ndarray) -> np.ndarray:
    return np.pad(values, 1, mode="constant", constant_values=0.0)


def central_dx(values: np.ndarray) -> np.ndarray:
    """D_x u: u_{i+1,j} - u_{i-1,j} with the zero layer"""
    p = _padded(values)
    return p[1:-1, 2:] - p[1:-1, :-2]


def central_dy(values: np.ndarray) -> np.ndarray:
    p = _padded(values)
    return p[2:, 1:-1] - p[:-2, 1:-1]


def gradient_central(u: ScalarField) -> VectorField:
    g = u.grid
    return VectorField(
        ScalarField(g, central_dx(u.values) / (2.0 * g.dx)),
        ScalarField(g, central_dy(u.values) / (2.0 * g.dy)),
    )


def divergence_central(w: VectorField) -> ScalarField:
    g = w.grid
    return ScalarField(
        g, central_dx(w.x.values) / (2.0 * g.dx) + central_dy(w.y.values) / (2.0 * g.dy)
    )


def laplacian_compact(u: ScalarField) -> ScalarField:
    g = u.grid
    p = _padded(u.values)
    centre = p[1:-1, 1:-1]
    lap_x = (p[1:-1, 2:] - 2.0 * centre + p[1:-1, :-2]) / g.dx ** 2
    lap_y = (p[2:, 1:-1] - 2.0 * centre + p[:-2, 1:-1]) / g.dy ** 2
    return ScalarField(g, lap_x + lap_y)


def _bilinear_weights(points: np.ndarray, grid: Grid):
    """Lower-left centre indices and fractional offsets for bilinear sampling."""
    pts = as_points(points)
    outside = ((pts[:, 0] < 0) | (pts[:, 0] > grid.width)
               | (pts[:, 1] < 0) | (pts[:, 1] > grid.height) | ~np.isfinite(pts).all(axis=1))
    if outside.any():
        bad = pts[np.argmax(outside)]
        raise OutOfDomainError(f"Cannot sample at ({bad[0]}, {bad[1]}): outside the domain")

    # continuous index in centre coordinates, clamped to the centre ring
    gx = np.clip(pts[:, 0] / grid.dx - 0.5, 0.0, grid.nx - 1)
    gy = np.clip(pts[:, 1] / grid.dy - 0.5, 0.0, grid.ny - 1)
    c0 = np.minimum(np.floor(gx).astype(int), max(grid.nx - 2, 0))
    r0 = np.minimum(np.floor(gy).astype(int), max(grid.ny - 2, 0))
    c1 = np.minimum(c0 + 1, grid.nx - 1)
    r1 = np.minimum(r0 + 1, grid.ny - 1)
    tx = gx - c0
    ty = gy - r0
    return r0, r1, c0, c1, tx, ty


def _bilinear_values(values: np.ndarray, weights) -> np.ndarray:
    r0, r1, c0, c1, tx, ty = weights
    bottom = (1.0 - tx) * values[r0, c0] + tx * values[r0, c1]
    top = (1.0 - tx) * values[r1, c0] + tx * values[r1, c1]
    return (1.0 - ty) * bottom + ty * top


def bilinear_sample(u: Union[ScalarField, VectorField], points) -> np.ndarray:
    """
    Bilinear interpolation through the four surrounding cell centres.

    Points in the half-cell margin outside the centre ring are clamped onto
    the ring first.

    Args:
        u: scalar or vector field
        points: one (x, y) pair or an (n, 2) array

    Returns:
        (n,) values for a scalar field, (n, 2) for a vector field

    Raises:
        OutOfDomainError: a point lies outside the domain
    """
    weights = _bilinear_weights(points, u.grid)
    if isinstance(u, VectorField):
        return np.column_stack([
            _bilinear_values(u.x.values, weights),
            _bilinear_values(u.y.values, weights),
        ])
    return _bilinear_values(u.values, weights)


def cutoff_L(a: float, b: float, t):
    """Piecewise linear ramp: 0 below a, 1 above b, linear between."""
    if not a < b:
        raise ValueError(f"cutoff_L requires a < b, got a={a}, b={b}")
    result = np.clip((np.asarray(t, dtype=float) - a) / (b - a), 0.0, 1.0)
    return float(result) if np.ndim(result) == 0 else result


def field_frame(u: Union[ScalarField, VectorField]) -> pd.DataFrame:
    """Table of cell values in flat-index order with 1-based i, j"""
    g = u.grid
    jj, ii = np.divmod(np.arange(g.size), g.nx)
    frame = {"i": ii + 1, "j": jj + 1}
    if isinstance(u, VectorField):
        frame["vx"] = u.x.flat()
        frame["vy"] = u.y.flat()
    else:
        frame["value"] = u.flat()
    return pd.DataFrame(frame)


def dump_field(u: Union[ScalarField, VectorField], path: Union[str, Path]) -> Path:
    """Write a field as CSV with header i,j,value (or i,j,vx,vy)."""
    path = write_csv(field_frame(u), path)
    logger.debug(f"💾 Field written to {path}")
    return path
