# modules/sph.py
"""
Kernel interpolation of particles onto the cell grid.

Particles are binned in squares of side 4h/3 and every non-empty bin
deposits its particles' kernel contributions on the cell centres in reach.
The module is used only for interpolation; no SPH forces are computed.
"""

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import integrate, optimize

from modules.fields import ScalarField, VectorField
from modules.scene import Grid
from utils.logger import get_logger
from utils.utility import KernelError

logger = get_logger(__name__)

KERNEL_KINDS = ("wendland", "gaussian", "bspline4")

# support radius in units of h
SUPPORT_FACTOR = {"wendland": 2.0, "gaussian": 3.0, "bspline4": 2.5}

BIN_SIDE_FACTOR = 4.0 / 3.0


def _bspline4_shape(q):
    q = np.asarray(q, dtype=float)
    a = np.clip(2.5 - q, 0.0, None) ** 4
    b = np.where(q < 1.5, np.clip(1.5 - q, 0.0, None) ** 4, 0.0)
    c = np.where(q < 0.5, np.clip(0.5 - q, 0.0, None) ** 4, 0.0)
    return a - 5.0 * b + 10.0 * c


@lru_cache(maxsize=None)
def bspline4_constant() -> float:
    """Normalisation of the quartic B-spline for h = 1, fixed by quadrature (96/(1199*pi))."""
    integral, _ = integrate.quad(lambda q: _bspline4_shape(q) * q, 0.0, 2.5, points=(0.5, 1.5))
    return 1.0 / (2.0 * math.pi * integral)


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "wendland"
    h: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelError(f"Unknown kernel {self.kind!r}; expected one of {KERNEL_KINDS}")
        if not self.h > 0:
            raise KernelError(f"Smoothing length must be positive, got {self.h}")

    @property
    def support(self) -> float:
        return SUPPORT_FACTOR[self.kind] * self.h


def kernel_eval(k: KernelSpec, r):
    """
    Evaluate the kernel at distance r.

    Args:
        k: kernel kind and smoothing length
        r: distance(s) in metres, r >= 0

    Returns:
        Density contribution in 1/m^2, zero beyond the support radius
    """
    r = np.abs(np.asarray(r, dtype=float))
    h = k.h
    q = r / h
    if k.kind == "wendland":
        value = 7.0 / (4.0 * math.pi * h * h) * np.clip(1.0 - 0.5 * q, 0.0, None) ** 4 * (1.0 + 2.0 * q)
    elif k.kind == "gaussian":
        # truncated at 3h and renormalised over the disc
        norm = 2.0 * math.pi * h * h * (1.0 - math.exp(-4.5))
        value = np.where(q <= 3.0, np.exp(-0.5 * q * q) / norm, 0.0)
    else:
        value = bspline4_constant() / (h * h) * _bspline4_shape(q)
    return float(value) if value.ndim == 0 else value


def kernel_normalisation(k: KernelSpec) -> float:
    """2*pi * integral of psi(r) r dr over the support; 1 for a normalised kernel"""
    breaks = {"bspline4": (0.5 * k.h, 1.5 * k.h)}.get(k.kind)
    integral, _ = integrate.quad(lambda r: kernel_eval(k, r) * r, 0.0, k.support, points=breaks)
    return 2.0 * math.pi * integral


class CellBins:
    """
    Square bins of side 4h/3 over the domain holding particle indices.

    Particles are sorted by bin with a stable sort, so particles inside one
    bin keep ascending index order.
    """

    def __init__(self, positions: np.ndarray, kernel: KernelSpec, width: float, height: float):
        self.side = BIN_SIDE_FACTOR * kernel.h
        self.nbx = max(1, int(math.ceil(width / self.side)))
        self.nby = max(1, int(math.ceil(height / self.side)))
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        bx = np.clip(np.floor(positions[:, 0] / self.side).astype(int), 0, self.nbx - 1)
        by = np.clip(np.floor(positions[:, 1] / self.side).astype(int), 0, self.nby - 1)
        self.bin_of = by * self.nbx + bx
        self.order = np.argsort(self.bin_of, kind="stable")
        counts = np.bincount(self.bin_of, minlength=self.nbx * self.nby)
        self.starts = np.concatenate([[0], np.cumsum(counts)])

    def particles_in(self, b: int) -> np.ndarray:
        return self.order[self.starts[b]:self.starts[b + 1]]

    def nonempty(self):
        counts = np.diff(self.starts)
        return np.flatnonzero(counts)

    def bin_rect(self, b: int) -> Tuple[float, float, float, float]:
        by, bx = divmod(int(b), self.nbx)
        return (bx * self.side, by * self.side, (bx + 1) * self.side, (by + 1) * self.side)


def _cells_in_reach(bins: CellBins, b: int, reach: float, grid: Grid) -> Tuple[slice, slice]:
    x0, y0, x1, y1 = bins.bin_rect(b)
    c_lo = max(0, int(math.floor((x0 - reach) / grid.dx - 0.5)))
    c_hi = min(grid.nx - 1, int(math.ceil((x1 + reach) / grid.dx - 0.5)))
    r_lo = max(0, int(math.floor((y0 - reach) / grid.dy - 0.5)))
    r_hi = min(grid.ny - 1, int(math.ceil((y1 + reach) / grid.dy - 0.5)))
    return slice(r_lo, r_hi + 1), slice(c_lo, c_hi + 1)


def interpolate_fields(positions: np.ndarray, velocities: np.ndarray, masses: np.ndarray,
                       kernel: KernelSpec, grid: Grid) -> Tuple[ScalarField, VectorField]:
    """
    Density and velocity fields at the cell centres.

    rho(c) = sum_i m_i psi(|x_i - c|); v(c) = sum_i m_i v_i psi(|x_i - c|) / rho(c),
    with v = 0 where rho = 0. Contributions are accumulated bin by bin in
    ascending bin order.

    Args:
        positions: (n, 2) active particle positions
        velocities: (n, 2) particle velocities
        masses: (n,) particle masses
        kernel: interpolation kernel
        grid: target grid

    Returns:
        (density, velocity)
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    velocities = np.asarray(velocities, dtype=float).reshape(-1, 2)
    masses = np.asarray(masses, dtype=float).reshape(-1)

    rho = np.zeros(grid.shape)
    mom_x = np.zeros(grid.shape)
    mom_y = np.zeros(grid.shape)

    if len(positions):
        cx, cy = grid.centers()
        bins = CellBins(positions, kernel, grid.width, grid.height)
        reach = kernel.support
        for b in bins.nonempty():
            members = bins.particles_in(b)
            rows, cols = _cells_in_reach(bins, b, reach, grid)
            centres_x = cx[rows, cols]
            centres_y = cy[rows, cols]
            dist = np.hypot(positions[members, 0, None, None] - centres_x[None],
                            positions[members, 1, None, None] - centres_y[None])
            weights = masses[members, None, None] * kernel_eval(kernel, dist)
            rho[rows, cols] += weights.sum(axis=0)
            mom_x[rows, cols] += np.tensordot(velocities[members, 0], weights, axes=1)
            mom_y[rows, cols] += np.tensordot(velocities[members, 1], weights, axes=1)

    vx = np.zeros(grid.shape)
    vy = np.zeros(grid.shape)
    occupied = rho > 0
    vx[occupied] = mom_x[occupied] / rho[occupied]
    vy[occupied] = mom_y[occupied] / rho[occupied]

    return ScalarField(grid, rho), VectorField(ScalarField(grid, vx), ScalarField(grid, vy))


def triangular_lattice(d: float, extent: float) -> np.ndarray:
    """Points of the triangular lattice a1 = (d, 0), a2 = (d/2, d*sqrt(3)/2) within ``extent`` of the origin"""
    a2y = d * math.sqrt(3.0) / 2.0
    n = int(math.ceil(extent / a2y)) + 2
    k, l = np.meshgrid(np.arange(-2 * n, 2 * n + 1), np.arange(-n, n + 1))
    x = k.ravel() * d + l.ravel() * d / 2.0
    y = l.ravel() * a2y
    pts = np.column_stack([x, y])
    return pts[np.hypot(pts[:, 0], pts[:, 1]) <= extent]


def lattice_density_probe(d: float, kind: str = "wendland", alignment: str = "particle") -> float:
    """
    Interpolated density of a closest-packed crowd.

    Unit-mass particles sit on a triangular lattice of spacing d and the
    kernel uses h = d. The probe is either on a particle or at the centroid
    of a lattice triangle.

    Returns:
        Density at the probe point in 1/m^2
    """
    if alignment not in ("particle", "centroid"):
        raise ValueError(f"alignment must be 'particle' or 'centroid', got {alignment!r}")
    kernel = KernelSpec(kind=kind, h=d)
    probe = np.zeros(2) if alignment == "particle" else np.array([d / 2.0, d * math.sqrt(3.0) / 6.0])
    lattice = triangular_lattice(d, kernel.support + 2.0 * d)
    dist = np.hypot(lattice[:, 0] - probe[0], lattice[:, 1] - probe[1])
    return float(np.sum(kernel_eval(kernel, dist)))


def planner_smoothing_length(dx: float, density_min: float, kind: str = "wendland",
                             xtol: float = 1e-6) -> float:
    """
    Smoothing length for the potential planner.

    A single particle must contribute at most ``density_min`` at distance
    sqrt(2)*dx/2. Scanning h upward from the density peak, this returns the
    smallest h on the decreasing branch meeting the bound.

    Args:
        dx: cell size in metres
        density_min: lower density threshold of the planner
        kind: kernel kind
        xtol: bisection tolerance

    Returns:
        Smoothing length in metres

    Raises:
        KernelError: invalid input or no sign change in the bracket
    """
    if not (dx > 0 and density_min > 0):
        raise KernelError(f"Need dx > 0 and density_min > 0, got dx={dx}, density_min={density_min}")

    r0 = math.sqrt(2.0) * dx / 2.0

    def excess(h: float) -> float:
        return kernel_eval(KernelSpec(kind, h), r0) - density_min

    # psi(0; h) = psi(0; 1)/h^2 bounds psi(r0; h) from above
    h_upper = math.sqrt(kernel_eval(KernelSpec(kind, 1.0), 0.0) / density_min)
    h_lower = r0 / SUPPORT_FACTOR[kind]

    peak = optimize.minimize_scalar(lambda h: -excess(h), bounds=(h_lower, max(h_upper, 2 * h_lower)),
                                    method="bounded", options={"xatol": xtol * 1e-2})
    h_peak = float(peak.x)
    if excess(h_peak) <= 0:
        logger.debug(f"Kernel peak {excess(h_peak) + density_min:.4f} below density_min; using peak h={h_peak:.6f}")
        return h_peak

    if excess(h_upper) >= 0:
        raise KernelError(f"No smoothing length in [{h_peak}, {h_upper}] meets density_min={density_min}")

    h = optimize.bisect(excess, h_peak, h_upper, xtol=xtol)
    while excess(h) > 0:
        h += xtol
    logger.debug(f"🔍 Planner smoothing length h={h:.6f} for dx={dx}, density_min={density_min}")
    return h
