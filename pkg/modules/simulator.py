# modules/simulator.py
"""
Time-stepping driver composing the planners, the pressure interaction and
the particle kinematics.

Modes:
    eikonal       density-dependent potential re-marched every step
    visgraph_uic  visibility-graph paths blended with the pressure-corrected
                  crowd velocity
    combined      density-free potential marched once, pressure interaction
                  every step
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from config.settings import Config
from modules.eikonal import (PotentialField, SpeedField, compute_discomfort, compute_speed_field,
                             compute_unit_cost, fast_march, potential_velocity, static_potential)
from modules.fields import ScalarField, bilinear_sample
from modules.metrics import Metrics, density_heatmap_accumulate
from modules.particles import (InflowState, ParticleSet, RngState, add_velocity_noise, apply_exit_cap,
                               clamp_speeds, correct_min_distance, min_distance_report,
                               nearest_neighbour_distances, spawn_disc, spawn_in_rect, spawn_uniform,
                               step_positions)
from modules.scene import Grid, Rect, SceneSpec, cells_of_points, exit_cell_mask, obstacle_cell_mask
from modules.sph import interpolate_fields
from modules.uic import LcpSolution, apply_pressure, asymmetry_ratio, build_lcp, pgs_solve, swarm_blend
from modules.visgraph import (Path, VisibilityGraph, build_graph, geometric_weights, shortest_path,
                              waypoint_direction)
from utils.logger import get_logger
from utils.utility import ConfigError, CrowdSimError, PathUnreachableError, SimulationError

logger = get_logger(__name__)

STALL_DISTANCE = 1e-9


@dataclass
class SimulationResult:
    metrics: Metrics
    particles: ParticleSet
    density: ScalarField
    pressure: Optional[np.ndarray]
    steps: int
    time: float


class CrowdSimulator:
    """
    Owns all mutable run state: particles, inflow counters, exit budgets,
    paths, the warm-start pressure and the metrics.
    """

    def __init__(self, config: Config, scene: SceneSpec):
        self.config = config.validate()
        self.scene = scene.validate()
        self.grid = Grid.for_scene(scene, config.cell_size)
        self.mask = obstacle_cell_mask(scene, self.grid)
        self.goal = exit_cell_mask(scene, self.grid)

        self.rng = RngState(config.seed)
        self.speeds = config.speed_distribution_spec()
        self.kernel = config.kernel_spec()
        self.rho_max = config.resolved_max_density()
        self.pressure_params = config.pressure_params()
        self.speed_params = config.speed_params()

        self.particles = ParticleSet()
        self.inflow = InflowState(scene)
        self.exit_carry = [0.0] * len(scene.exits)
        self.stalled = np.zeros(0, dtype=bool)
        self.pressure: Optional[np.ndarray] = None
        self.metrics = Metrics(self.grid)
        self.last_density = ScalarField.zeros(self.grid)

        self.graph: Optional[VisibilityGraph] = None
        self.paths: Dict[int, Path] = {}
        self.distance_potential: Optional[PotentialField] = None
        self.route_potential: Optional[PotentialField] = None
        self.route_speeds: Optional[SpeedField] = None
        self._prepare_planner()

    # ------------------------------------------------------------------
    # Setup
    # ------------------------------------------------------------------

    def _prepare_planner(self):
        mode = self.config.mode
        if mode == "visgraph_uic":
            self.graph = build_graph(self.scene, self.config.resolved_margin())
            return

        self.distance_potential = static_potential(self.grid, self.mask, self.goal)
        if mode == "combined":
            empty = ScalarField.zeros(self.grid)
            self.route_speeds = compute_speed_field(empty, self.speed_params)
            discomfort = compute_discomfort(empty, self.mask, self.config.discomfort_params())
            cost = compute_unit_cost(self.route_speeds, discomfort, self.config.cost_weights(), self.mask)
            self.route_potential = fast_march(self.mask, self.goal, cost)
            logger.info("🗺️  Density-free route potential marched once")

    def _initial_particles(self) -> ParticleSet:
        n = self.config.initial_particles
        region = self.config.initial_region
        gen = self.rng.generator
        mass = self.config.particle_mass
        if n == 0:
            return ParticleSet()
        if region == "scene":
            return spawn_uniform(n, self.scene, gen, self.speeds, mass)
        if isinstance(region, (list, tuple)) and len(region) == 4:
            return spawn_in_rect(n, Rect.from_list(region), self.scene, gen, self.speeds, mass)
        if isinstance(region, dict) and {"center", "radius"} <= set(region):
            return spawn_disc(n, region["center"], float(region["radius"]), self.scene, gen, self.speeds, mass)
        raise ConfigError(f"initial_region must be 'scene', [x0, y0, x1, y1] or {{center, radius}}, got {region!r}")

    def _planned_lengths(self, ids: np.ndarray) -> np.ndarray:
        """Obstacle-avoiding distance to the nearest exit for freshly spawned particles"""
        positions = self.particles.positions[ids]
        if self.config.mode == "visgraph_uic":
            lengths = np.empty(len(ids))
            params = self.config.planner_params()
            for k, pid in enumerate(ids):
                try:
                    path = shortest_path(self.graph, positions[k], params)
                except PathUnreachableError:
                    logger.warning(f"⚠️ Particle {int(pid)} at ({positions[k][0]:.2f}, {positions[k][1]:.2f}) "
                                   f"cannot reach an exit; it stays in place")
                    path = Path(waypoints=positions[k][None, :].copy(),
                                weights=geometric_weights(params.lookahead_points), length=math.nan)
                self.paths[int(pid)] = path
                lengths[k] = path.length
            return lengths
        col, row = cells_of_points(positions, self.grid)
        lengths = self.distance_potential.values[row, col].astype(float)
        lengths[~np.isfinite(lengths)] = np.nan
        return lengths

    def _admit(self, batch: ParticleSet, t: float) -> int:
        if len(batch) == 0:
            return 0
        ids = self.particles.extend(batch)
        self.stalled = np.concatenate([self.stalled, np.zeros(len(ids), dtype=bool)])
        planned = self._planned_lengths(ids) / self.particles.max_speeds[ids]
        self.metrics.register_spawns(ids, self.particles.positions[ids], t, planned)
        return len(ids)

    # ------------------------------------------------------------------
    # Velocities
    # ------------------------------------------------------------------

    def _potential_velocities(self, ids, phi: PotentialField, f: SpeedField) -> np.ndarray:
        """Potential-driven velocities scaled to each particle's own maximum speed"""
        positions = self.particles.positions[ids]
        v = potential_velocity(positions, phi, f, self.rng.generator, stalled=self.stalled[ids],
                               scene=self.scene, dt=self.config.dt)
        return v * (self.particles.max_speeds[ids] / self.speed_params.speed_max)[:, None]

    def _path_velocities(self, ids) -> np.ndarray:
        desired = np.zeros((len(ids), 2))
        for k, pid in enumerate(ids):
            direction = waypoint_direction(self.paths[int(pid)], self.particles.positions[pid])
            desired[k] = direction * self.particles.max_speeds[pid]
        return desired

    def _pressure_velocities(self, ids, desired: np.ndarray, step: int):
        """Blend desired velocities with the pressure-corrected crowd velocity"""
        positions = self.particles.positions[ids]
        rho, v = interpolate_fields(positions, desired, self.particles.masses[ids], self.kernel, self.grid)
        if not self.config.uic_enabled:
            return desired, rho, None

        walls = self.config.closed_walls
        prob = build_lcp(rho, v, self.pressure_params, self.config.dt, self.mask,
                         closed_walls=walls, open_cells=self.goal)
        cap = self.pressure_params.iteration_cap(prob.size)
        solution = pgs_solve(prob, self.pressure, self.pressure_params.tolerance, cap)
        self.pressure = solution.z

        crowd = apply_pressure(v, solution.z, self.pressure_params.speed_max,
                               closed_walls=walls, open_cells=self.goal)
        blended = swarm_blend(desired, bilinear_sample(crowd, positions), bilinear_sample(rho, positions),
                              self.rho_max)
        self._log_solver(step, solution, rho, prob.M)
        return blended, rho, solution

    def _log_solver(self, step: int, solution: LcpSolution, rho: ScalarField, M) -> None:
        if not (self.config.solver_log or self.config.asymmetry_audit):
            return
        asymmetry = asymmetry_ratio(M) if self.config.asymmetry_audit else math.nan
        ratio = float(rho.values.max()) / self.rho_max
        self.metrics.record_solver(step, solution.iterations, solution.fb_residual, ratio, asymmetry)
        logger.debug(f"step {step}: {solution.iterations} sweeps, FB {solution.fb_residual:.3e}, "
                     f"max rho/rho_max {ratio:.3f}")

    def _velocities(self, ids, step: int):
        mode = self.config.mode
        positions = self.particles.positions[ids]
        masses = self.particles.masses[ids]

        if mode == "eikonal":
            rho, _ = interpolate_fields(positions, self.particles.velocities[ids], masses, self.kernel, self.grid)
            f = compute_speed_field(rho, self.speed_params)
            g = compute_discomfort(rho, self.mask, self.config.discomfort_params())
            u = compute_unit_cost(f, g, self.config.cost_weights(), self.mask)
            phi = fast_march(self.mask, self.goal, u)
            return self._potential_velocities(ids, phi, f), rho, None

        if mode == "combined":
            desired = self._potential_velocities(ids, self.route_potential, self.route_speeds)
        else:
            desired = self._path_velocities(ids)
        return self._pressure_velocities(ids, desired, step)

    # ------------------------------------------------------------------
    # Stepping
    # ------------------------------------------------------------------

    def _remove_exited(self, candidates: Dict[int, list]) -> list:
        removed = []
        seen = set()
        for k, ex in enumerate(self.scene.exits):
            pending = [pid for pid in candidates[k] if pid not in seen]
            leaving, self.exit_carry[k] = apply_exit_cap(ex, pending, self.config.dt, self.exit_carry[k])
            seen.update(leaving)
            removed.extend(leaving)
        removed = sorted(removed)
        if removed:
            self.particles.active[removed] = False
            self.particles.velocities[removed] = 0.0
            for pid in removed:
                self.paths.pop(pid, None)
        return removed

    def step(self, n: int) -> None:
        """Advance the state from t = n*dt to (n+1)*dt"""
        cfg = self.config
        t = n * cfg.dt
        gen = self.rng.generator

        before = self.particles.n_active
        arrived = self._admit(self.inflow.step(cfg.dt, gen, self.speeds, cfg.particle_mass), t)

        ids = self.particles.active_ids()
        solution = None
        if len(ids):
            velocities, rho, solution = self._velocities(ids, n)
            self.particles.velocities[ids] = velocities
            clamp_speeds(self.particles)
            add_velocity_noise(self.particles, cfg.noise_sigma, gen)

            start = self.particles.positions[ids].copy()
            candidates = step_positions(self.particles, cfg.dt, self.scene)
            moved = np.hypot(*(self.particles.positions[ids] - start).T)
            speed = np.hypot(*self.particles.velocities[ids].T)
            self.stalled[ids] = (moved < STALL_DISTANCE) & (speed > 0)
            self.metrics.add_travel(ids, moved)

            removed = self._remove_exited(candidates)
            self.metrics.register_exits(removed, t + cfg.dt)
            if cfg.correct_min_distance and cfg.min_distance > 0:
                correct_min_distance(self.particles, cfg.min_distance, self.scene, gen)
        else:
            rho = ScalarField.zeros(self.grid)
            removed = []

        after = self.particles.n_active
        if after != before + arrived - len(removed):
            raise SimulationError(f"Particle count drifted: {before} + {arrived} - {len(removed)} != {after}",
                                  step=n, time=t)

        density_heatmap_accumulate(self.metrics.heatmap, rho, cfg.dt)
        nearest = nearest_neighbour_distances(self.particles.positions[self.particles.active])
        self.metrics.record_step(
            t + cfg.dt, after, rho,
            solution.fb_residual if solution is not None else math.nan,
            int(np.count_nonzero(nearest < cfg.min_distance)),
        )
        self.last_density = rho

    def run(self) -> SimulationResult:
        """
        Run until t_max, or until the scene is empty and no entrance can
        produce another arrival.

        Raises:
            SimulationError: any module failure, with the step and time
        """
        cfg = self.config
        logger.info(f"🚶 Starting {cfg.mode} run on '{self.scene.name}' "
                    f"({self.grid.nx}x{self.grid.ny} cells, dt={cfg.dt}s, seed={cfg.seed})")
        self._admit(self._initial_particles(), 0.0)

        n_steps = int(math.ceil(cfg.t_max / cfg.dt - 1e-9))
        steps = 0
        for n in range(n_steps):
            if self.particles.n_active == 0 and self.inflow.exhausted:
                break
            try:
                self.step(n)
            except SimulationError:
                logger.error(f"❌ Simulation aborted at step {n}", exc_info=True)
                raise
            except (CrowdSimError, ValueError, FloatingPointError) as e:
                logger.error(f"❌ Simulation aborted at step {n}: {e}", exc_info=True)
                raise SimulationError(str(e), step=n, time=n * cfg.dt) from e
            steps = n + 1

        end = steps * cfg.dt
        self.metrics.end_time = end
        self.metrics.mde = min_distance_report(self.particles, cfg.mde_radii)
        logger.info(f"✅ Run finished after {steps} steps ({end:.2f}s): "
                    f"{self.metrics.n_particles} particles, {self.particles.n_active} still inside")
        return SimulationResult(
            metrics=self.metrics,
            particles=self.particles,
            density=self.last_density,
            pressure=self.pressure,
            steps=steps,
            time=end,
        )


def run(config: Config, scene: SceneSpec) -> SimulationResult:
    """Build a simulator for ``config`` and ``scene`` and run it to completion"""
    return CrowdSimulator(config, scene).run()
