# config/settings.py
"""
Configuration settings for the crowd simulation engine

A run is described by one flat TOML file (every parameter has a default) and
one scenario file. Environment variables override a handful of keys so batch
jobs can vary seeds and output folders without editing files.
"""

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Any, Optional, Union

from utils.logger import get_logger
from utils.utility import ConfigError, validate_directory

logger = get_logger(__name__)

MODES = ("eikonal", "visgraph_uic", "combined")
KERNELS = ("wendland", "gaussian", "bspline4")
SPEED_DISTRIBUTIONS = ("normal", "uniform", "constant")

ENV_OVERRIDES = {
    "CROWDSIM_SEED": ("seed", int),
    "CROWDSIM_MODE": ("mode", str),
    "CROWDSIM_OUTPUT_DIR": ("output_dir", str),
    "CROWDSIM_LOG_LEVEL": ("log_level", str),
}


@dataclass
class Config:
    """Application configuration settings"""

    # Driver
    mode: str = "visgraph_uic"
    dt: float = 0.05
    t_max: float = 60.0
    seed: int = 0
    output_dir: str = "output"
    log_level: str = "INFO"

    # Grid and kernel
    cell_size: float = 1.0
    kernel: str = "wendland"
    smoothing_length: Union[float, str] = 1.0

    # Particles
    particle_radius: float = 0.2
    particle_mass: float = 1.0
    min_distance: float = 0.25
    max_density: Optional[float] = None
    speed_distribution: str = "normal"
    speed_mean: float = 1.44
    speed_std: float = 0.15
    speed_low: float = 1.0
    speed_high: float = 2.0
    initial_particles: int = 0
    initial_region: Any = "scene"
    noise_sigma: float = 0.0
    correct_min_distance: bool = False

    # Potential planner
    speed_max: float = 1.44
    speed_min: float = 0.2
    look_ahead: float = 1.0
    density_min: float = 0.5
    density_max: Optional[float] = None
    obstacle_clearance: Optional[float] = None
    cost_alpha: float = 1.0
    cost_beta: float = 1.0
    cost_gamma: float = 1.0

    # Visibility-graph planner
    margin: Optional[float] = None
    lookahead_points: int = 4
    waypoint_spacing: float = 2.0

    # Pressure interaction
    uic_enabled: bool = True
    boundary_pressure: float = 1.0
    density_shift: float = 0.01
    pgs_tolerance: float = 1e-6
    pgs_max_iterations: Optional[int] = None
    crowd_speed: float = 1.44
    closed_walls: bool = True
    asymmetry_audit: bool = False
    solver_log: bool = False

    # Metrics
    mde_radii: list = field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0, 2.0])

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "Config":
        """
        Load a flat TOML configuration file.

        Args:
            path: Path to the .toml file

        Returns:
            Config with file values applied over the defaults

        Raises:
            ConfigError: file missing, malformed, or carrying unknown keys
        """
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}")
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Malformed configuration file {path}: {e}") from e

        config = cls.from_dict(raw)
        logger.debug(f"📄 Loaded configuration from {path}")
        return config

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {', '.join(unknown)}")
        return cls(**raw)

    def apply_env(self) -> "Config":
        """Apply CROWDSIM_* environment overrides in place."""
        for var, (key, cast) in ENV_OVERRIDES.items():
            value = os.getenv(var)
            if value is None or value == "":
                continue
            try:
                setattr(self, key, cast(value))
            except ValueError as e:
                raise ConfigError(f"Invalid value for {var}: {value!r}") from e
            logger.debug(f"🔧 {var} overrides {key} = {value}")
        return self

    # ------------------------------------------------------------------
    # Derived values
    # ------------------------------------------------------------------

    def resolved_max_density(self) -> float:
        if self.max_density is not None:
            return float(self.max_density)
        from modules.particles import max_density_from_min_distance
        return max_density_from_min_distance(self.min_distance, self.particle_radius)

    def resolved_density_max(self) -> float:
        if self.density_max is not None:
            return float(self.density_max)
        return self.resolved_max_density()

    def resolved_smoothing_length(self) -> float:
        if isinstance(self.smoothing_length, str):
            from modules.sph import planner_smoothing_length
            return planner_smoothing_length(self.cell_size, self.density_min, kind=self.kernel)
        return float(self.smoothing_length)

    def resolved_margin(self) -> float:
        return 2.0 * self.particle_radius if self.margin is None else float(self.margin)

    def resolved_obstacle_clearance(self) -> float:
        return self.cell_size if self.obstacle_clearance is None else float(self.obstacle_clearance)

    # ------------------------------------------------------------------
    # Parameter objects consumed by the modules
    # ------------------------------------------------------------------

    def kernel_spec(self):
        from modules.sph import KernelSpec
        return KernelSpec(kind=self.kernel, h=self.resolved_smoothing_length())

    def speed_params(self):
        from modules.eikonal import SpeedParams
        return SpeedParams(
            speed_max=self.speed_max,
            speed_min=self.speed_min,
            look_ahead=self.look_ahead,
            density_min=self.density_min,
            density_max=self.resolved_density_max(),
        )

    def discomfort_params(self):
        from modules.eikonal import DiscomfortParams
        return DiscomfortParams(
            obstacle_clearance=self.resolved_obstacle_clearance(),
            look_ahead=self.look_ahead,
            density_min=self.density_min,
            density_max=self.resolved_density_max(),
        )

    def cost_weights(self):
        from modules.eikonal import CostWeights
        return CostWeights(alpha=self.cost_alpha, beta=self.cost_beta, gamma=self.cost_gamma)

    def planner_params(self):
        from modules.visgraph import PlannerParams
        return PlannerParams(
            margin=self.resolved_margin(),
            lookahead_points=self.lookahead_points,
            waypoint_spacing=self.waypoint_spacing,
        )

    def pressure_params(self):
        from modules.uic import PressureParams
        return PressureParams(
            max_density=self.resolved_max_density(),
            boundary_pressure=self.boundary_pressure,
            density_shift=self.density_shift,
            tolerance=self.pgs_tolerance,
            max_iterations=self.pgs_max_iterations,
            speed_max=self.crowd_speed,
        )

    def speed_distribution_spec(self):
        from modules.particles import SpeedDistribution
        return SpeedDistribution(
            kind=self.speed_distribution,
            mean=self.speed_mean,
            std=self.speed_std,
            low=self.speed_low,
            high=self.speed_high,
        )

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------

    def validate(self) -> "Config":
        """
        Check parameter invariants.

        Raises:
            ConfigError: first violated invariant
        """
        problems = []

        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.kernel not in KERNELS:
            problems.append(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if self.speed_distribution not in SPEED_DISTRIBUTIONS:
            problems.append(f"speed_distribution must be one of {SPEED_DISTRIBUTIONS}")
        if isinstance(self.smoothing_length, str) and self.smoothing_length != "auto":
            problems.append("smoothing_length must be a positive number or 'auto'")
        elif not isinstance(self.smoothing_length, str) and self.smoothing_length <= 0:
            problems.append("smoothing_length must be > 0")

        positive = ("dt", "t_max", "cell_size", "particle_mass", "speed_max", "speed_min",
                    "density_min", "boundary_pressure", "density_shift", "pgs_tolerance",
                    "crowd_speed", "waypoint_spacing")
        for key in positive:
            if getattr(self, key) <= 0:
                problems.append(f"{key} must be > 0")

        non_negative = ("particle_radius", "min_distance", "noise_sigma", "look_ahead",
                        "cost_alpha", "cost_beta", "cost_gamma", "initial_particles")
        for key in non_negative:
            if getattr(self, key) < 0:
                problems.append(f"{key} must be >= 0")

        if self.min_distance + 2 * self.particle_radius <= 0 and self.max_density is None:
            problems.append("min_distance + 2*particle_radius must be > 0 to derive max_density")
        if self.speed_min > self.speed_max:
            problems.append("speed_min must not exceed speed_max")
        if self.speed_distribution == "uniform" and self.speed_low > self.speed_high:
            problems.append("speed_low must not exceed speed_high")
        if self.lookahead_points < 1:
            problems.append("lookahead_points must be >= 1")
        if self.pgs_max_iterations is not None and self.pgs_max_iterations < 1:
            problems.append("pgs_max_iterations must be >= 1")
        if self.margin is not None and self.margin < 0:
            problems.append("margin must be >= 0")
        if self.obstacle_clearance is not None and self.obstacle_clearance < 0:
            problems.append("obstacle_clearance must be >= 0")
        if any(r <= 0 for r in self.mde_radii):
            problems.append("mde_radii must be positive")

        if not problems:
            try:
                if self.density_min >= self.resolved_density_max():
                    problems.append("density_min must be below density_max")
            except Exception as e:
                problems.append(str(e))

        if problems:
            for problem in problems:
                logger.error(f"❌ {problem}")
            raise ConfigError("; ".join(problems))

        logger.debug("✅ Configuration validated")
        return self

    def validate_paths(self) -> bool:
        """Validate that the output directory exists or can be created"""
        if validate_directory(self.output_dir):
            logger.info(f"✅ Output directory: {self.output_dir}")
            return True
        logger.error(f"❌ Output directory not writable: {self.output_dir}")
        return False

    def to_dict(self) -> dict:
        return asdict(self)

    def __str__(self) -> str:
        """String representation of configuration"""
        return f"""
Crowd Simulation Configuration:
  Mode: {self.mode}
  Time step / horizon: {self.dt}s / {self.t_max}s
  Seed: {self.seed}
  Cell size: {self.cell_size}m
  Kernel: {self.kernel} (h={self.smoothing_length})
  UIC enabled: {self.uic_enabled}
  Output: {self.output_dir}
"""
