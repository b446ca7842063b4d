# modules/metrics.py
"""
Run metrics: per-particle timing, density heatmap, time series and the
minimum-distance report, plus their CSV/JSON export.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from modules.fields import ScalarField, field_frame
from modules.scene import Grid
from utils.logger import get_logger
from utils.utility import validate_directory, write_csv

logger = get_logger(__name__)

PARTICLE_COLUMNS = ["id", "spawn_x", "spawn_y", "spawn_t", "exit_t", "planned_t", "delay", "mean_speed"]
SERIES_COLUMNS = ["t", "n_active", "max_density", "fb_residual", "lyapunov", "violations"]
SOLVER_COLUMNS = ["step", "iterations", "fb_residual", "max_density_ratio", "asymmetry"]

DELAY_MIN = -0.5
DELAY_MAX = 1.0


def relative_delay(planned: float, observed: float) -> float:
    """
    Relative delay 1 - t_planned / t_observed, clipped to [-0.5, 1].

    Negative values mean the particle arrived earlier than planned.

    Raises:
        ValueError: non-positive planned time
    """
    if not planned > 0:
        raise ValueError(f"Planned time must be positive, got {planned}")
    if observed <= 0:
        return DELAY_MIN
    return float(min(max(1.0 - planned / observed, DELAY_MIN), DELAY_MAX))


def density_heatmap_accumulate(acc: np.ndarray, rho: ScalarField, dt: float) -> np.ndarray:
    """R <- R + log(1 + rho) * dt, in place"""
    acc += np.log1p(np.maximum(rho.values, 0.0)) * dt
    return acc


def lyapunov_value(rho: ScalarField, phi: ScalarField) -> float:
    """sum over cells of rho * phi * cell area"""
    return float(np.sum(rho.values * phi.values) * rho.grid.cell_area)


@dataclass
class Metrics:
    grid: Grid
    spawn_x: List[float] = field(default_factory=list)
    spawn_y: List[float] = field(default_factory=list)
    spawn_t: List[float] = field(default_factory=list)
    exit_t: List[float] = field(default_factory=list)
    planned_t: List[float] = field(default_factory=list)
    travelled: List[float] = field(default_factory=list)
    heatmap: Optional[np.ndarray] = None
    series: List[dict] = field(default_factory=list)
    solver: List[dict] = field(default_factory=list)
    mde: Dict[float, int] = field(default_factory=dict)
    end_time: float = 0.0

    def __post_init__(self):
        if self.heatmap is None:
            self.heatmap = np.zeros(self.grid.shape)

    @property
    def n_particles(self) -> int:
        return len(self.spawn_t)

    def register_spawns(self, ids: np.ndarray, positions: np.ndarray, t: float, planned: np.ndarray) -> None:
        for pid, pos, plan in zip(ids, positions, planned):
            if pid != len(self.spawn_t):
                raise ValueError(f"Particle ids must be registered in order, got {pid}")
            self.spawn_x.append(float(pos[0]))
            self.spawn_y.append(float(pos[1]))
            self.spawn_t.append(float(t))
            self.exit_t.append(math.nan)
            self.planned_t.append(float(plan))
            self.travelled.append(0.0)

    def register_exits(self, ids, t: float) -> None:
        for pid in ids:
            self.exit_t[pid] = float(t)

    def add_travel(self, ids: np.ndarray, distances: np.ndarray) -> None:
        for pid, d in zip(ids, distances):
            self.travelled[pid] += float(d)

    def record_step(self, t: float, n_active: int, rho: ScalarField, fb: float, violations: int) -> None:
        self.series.append({
            "t": float(t),
            "n_active": int(n_active),
            "max_density": float(rho.values.max()) if rho.values.size else 0.0,
            "fb_residual": float(fb),
            "lyapunov": lyapunov_value(rho, rho),
            "violations": int(violations),
        })

    def record_solver(self, step: int, iterations: int, fb: float, ratio: float, asymmetry: float) -> None:
        self.solver.append({
            "step": int(step),
            "iterations": int(iterations),
            "fb_residual": float(fb),
            "max_density_ratio": float(ratio),
            "asymmetry": float(asymmetry),
        })

    # ------------------------------------------------------------------
    # Tables
    # ------------------------------------------------------------------

    def particle_frame(self) -> pd.DataFrame:
        rows = []
        for pid in range(self.n_particles):
            spawn, leave, plan = self.spawn_t[pid], self.exit_t[pid], self.planned_t[pid]
            exited = not math.isnan(leave)
            observed = (leave if exited else self.end_time) - spawn
            delay = relative_delay(plan, observed) if exited and math.isfinite(plan) and plan > 0 else math.nan
            rows.append({
                "id": pid,
                "spawn_x": self.spawn_x[pid],
                "spawn_y": self.spawn_y[pid],
                "spawn_t": spawn,
                "exit_t": leave,
                "planned_t": plan,
                "delay": delay,
                "mean_speed": self.travelled[pid] / observed if observed > 0 else math.nan,
            })
        return pd.DataFrame(rows, columns=PARTICLE_COLUMNS)

    def series_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.series, columns=SERIES_COLUMNS)

    def solver_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.solver, columns=SOLVER_COLUMNS)

    def mde_frame(self) -> pd.DataFrame:
        rows = [{"radius": r, "count": c} for r, c in sorted(self.mde.items())]
        return pd.DataFrame(rows, columns=["radius", "count"])

    def summary(self) -> dict:
        exits = [t for t in self.exit_t if not math.isnan(t)]
        frame = self.particle_frame()
        return {
            "particles": self.n_particles,
            "exited": len(exits),
            "first_exit": min(exits) if exits else None,
            "last_exit": max(exits) if exits else None,
            "mean_delay": None if frame["delay"].isna().all() else float(frame["delay"].mean()),
            "mean_speed": None if frame["mean_speed"].isna().all() else float(frame["mean_speed"].mean()),
            "end_time": self.end_time,
        }


def export_metrics(m: Metrics, directory: Union[str, Path], config: Optional[dict] = None,
                   seed: Optional[int] = None, scene: Optional[dict] = None) -> Dict[str, Path]:
    """
    Write the metric tables and a run manifest.

    Files: particles.csv, heatmap.csv, series.csv, mde.csv, manifest.json and,
    when solver rows were recorded, solver.csv. The manifest carries no
    wall-clock data, so identical runs produce identical files.

    Args:
        m: collected metrics
        directory: output folder, created when missing
        config: configuration echoed into the manifest
        seed: run seed
        scene: scene description echoed into the manifest

    Returns:
        File label -> written path
    """
    directory = Path(directory)
    try:
        if not validate_directory(directory):
            raise OSError(f"Output directory not writable: {directory}")

        written = {
            "particles": write_csv(m.particle_frame(), directory / "particles.csv"),
            "heatmap": write_csv(field_frame(ScalarField(m.grid, m.heatmap)), directory / "heatmap.csv"),
            "series": write_csv(m.series_frame(), directory / "series.csv"),
            "mde": write_csv(m.mde_frame(), directory / "mde.csv"),
        }
        if m.solver:
            written["solver"] = write_csv(m.solver_frame(), directory / "solver.csv")

        manifest = {
            "seed": seed,
            "config": config or {},
            "scene": scene or {},
            "grid": {"nx": m.grid.nx, "ny": m.grid.ny, "dx": m.grid.dx, "dy": m.grid.dy},
            "summary": m.summary(),
            "files": sorted(p.name for p in written.values()) + ["manifest.json"],
        }
        manifest_path = directory / "manifest.json"
        with open(manifest_path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
        written["manifest"] = manifest_path

        logger.info(f"💾 Metrics written to {directory} ({len(written)} files)")
        return written
    except OSError as e:
        logger.error(f"❌ Failed to export metrics to {directory}: {e}", exc_info=True)
        raise
