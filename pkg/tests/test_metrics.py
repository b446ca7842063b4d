"""
Delay, heatmap and Lyapunov helpers, and the metric export
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from modules.fields import ScalarField
from modules.metrics import (
    PARTICLE_COLUMNS,
    SERIES_COLUMNS,
    Metrics,
    density_heatmap_accumulate,
    export_metrics,
    lyapunov_value,
    relative_delay,
)
from modules.scene import Grid


@pytest.mark.parametrize(
    "planned, observed, expected",
    [(10.0, 10.0, 0.0), (10.0, 20.0, 0.5), (10.0, 5.0, -0.5), (10.0, 8.0, -0.25), (1.0, 1e9, 1.0 - 1e-9),
     (10.0, 0.0, -0.5)],
)
def test_relative_delay(planned, observed, expected):
    assert relative_delay(planned, observed) == pytest.approx(expected)


def test_relative_delay_needs_planned_time():
    with pytest.raises(ValueError):
        relative_delay(0.0, 3.0)


def test_heatmap_accumulates_log_density(small_grid):
    acc = np.zeros(small_grid.shape)
    rho = ScalarField(small_grid, np.full(small_grid.shape, math.e - 1.0))
    density_heatmap_accumulate(acc, rho, 0.5)
    density_heatmap_accumulate(acc, rho, 0.5)
    assert np.allclose(acc, 1.0)


def test_lyapunov_of_uniform_density():
    grid = Grid(5, 4, 0.5, 2.0)
    rho = ScalarField(grid, np.full(grid.shape, 3.0))
    assert lyapunov_value(rho, rho) == pytest.approx(9.0 * grid.width * grid.height)


def filled_metrics(grid):
    m = Metrics(grid)
    m.register_spawns(np.array([0, 1]), np.array([[1.0, 1.0], [2.0, 1.0]]), 0.0, np.array([4.0, np.nan]))
    m.add_travel(np.array([0, 1]), np.array([5.0, 1.0]))
    m.register_exits([0], 5.0)
    m.record_step(0.5, 2, ScalarField(grid, np.full(grid.shape, 0.5)), 0.0, 1)
    m.record_solver(1, 12, 1e-8, 0.9, 0.01)
    m.mde = {0.5: 1, 0.1: 0}
    m.end_time = 10.0
    return m


def test_particle_frame(small_grid):
    frame = filled_metrics(small_grid).particle_frame()
    assert list(frame.columns) == PARTICLE_COLUMNS
    first, second = frame.iloc[0], frame.iloc[1]
    assert first["delay"] == pytest.approx(0.2)
    assert first["mean_speed"] == pytest.approx(1.0)
    assert math.isnan(second["exit_t"]) and math.isnan(second["delay"])
    assert second["mean_speed"] == pytest.approx(0.1)


def test_spawns_must_arrive_in_order(small_grid):
    with pytest.raises(ValueError):
        Metrics(small_grid).register_spawns([3], [[0.0, 0.0]], 0.0, [1.0])


def test_summary(small_grid):
    summary = filled_metrics(small_grid).summary()
    assert summary["particles"] == 2
    assert summary["exited"] == 1
    assert summary["first_exit"] == summary["last_exit"] == 5.0
    assert summary["mean_delay"] == pytest.approx(0.2)


def test_export_of_empty_run(tmp_path, small_grid):
    written = export_metrics(Metrics(small_grid), tmp_path / "out")
    assert set(written) == {"particles", "heatmap", "series", "mde", "manifest"}
    assert list(pd.read_csv(written["particles"]).columns) == PARTICLE_COLUMNS
    assert pd.read_csv(written["particles"]).empty
    assert list(pd.read_csv(written["series"]).columns) == SERIES_COLUMNS
    assert len(pd.read_csv(written["heatmap"])) == small_grid.size


def test_export_roundtrip(tmp_path, small_grid):
    m = filled_metrics(small_grid)
    written = export_metrics(m, tmp_path, config={"dt": 0.1}, seed=42, scene={"width": 4.0})
    assert "solver" in written
    particles = pd.read_csv(written["particles"])
    assert particles["exit_t"].iloc[0] == 5.0
    series = pd.read_csv(written["series"])
    assert series["violations"].tolist() == [1]
    mde = pd.read_csv(written["mde"])
    assert mde["radius"].tolist() == [0.1, 0.5]

    manifest = json.loads(written["manifest"].read_text())
    assert manifest["seed"] == 42
    assert manifest["config"] == {"dt": 0.1}
    assert manifest["grid"] == {"nx": 4, "ny": 3, "dx": 1.0, "dy": 1.0}
    assert "solver.csv" in manifest["files"]
    assert not (tmp_path / ".write_test").exists()
