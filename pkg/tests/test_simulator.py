"""
End-to-end runs of the time-stepping driver on small scenes
"""

import math

import numpy as np
import pytest

import modules.simulator as simulator
from config.settings import Config
from modules.metrics import export_metrics
from modules.scene import Entrance, Exit, Rect, SceneSpec
from modules.simulator import CrowdSimulator, run
from utils.utility import ConfigError, LcpSolverError, SimulationError


@pytest.fixture
def hallway():
    return SceneSpec(20.0, 4.0, exits=(Exit(Rect(19.0, 0.0, 20.0, 4.0)),), name="hallway")


def test_single_walker_exits_on_time(hallway):
    config = Config(mode="visgraph_uic", uic_enabled=False, dt=0.1, t_max=30.0,
                    speed_distribution="constant", speed_mean=1.0,
                    initial_particles=1, initial_region=[1.0, 1.5, 1.5, 2.5])
    result = run(config, hallway)
    frame = result.metrics.particle_frame()
    x0 = frame["spawn_x"].iloc[0]
    assert abs(frame["exit_t"].iloc[0] - (19.0 - x0)) <= config.dt + 1e-9
    assert frame["mean_speed"].iloc[0] == pytest.approx(1.0, abs=0.05)
    assert frame["planned_t"].iloc[0] == pytest.approx(19.25 - x0, abs=1e-6)
    # the run stops once the scene is empty
    assert result.time < config.t_max
    assert result.particles.n_active == 0


@pytest.mark.parametrize("mode", ["eikonal", "combined", "visgraph_uic"])
def test_modes_conserve_particles(block_scene, mode):
    config = Config(mode=mode, dt=0.2, t_max=6.0, seed=2, initial_particles=40,
                    initial_region=[0.0, 0.0, 6.0, 20.0], pgs_max_iterations=200)
    result = CrowdSimulator(config, block_scene).run()
    m = result.metrics
    exited = int(np.isfinite(m.exit_t).sum())
    assert m.n_particles == 40
    assert result.particles.n_active + exited == 40
    series = m.series_frame()
    assert len(series) == result.steps
    assert (series["n_active"].diff().dropna() <= 0).all()
    assert not block_scene.in_obstacle(result.particles.positions).any()
    if mode == "eikonal":
        assert series["fb_residual"].isna().all()
    else:
        assert series["fb_residual"].notna().all()


def test_inflow_feeds_the_scene(inflow_scene):
    config = Config(dt=0.1, t_max=12.0, seed=4, solver_log=True)
    result = run(config, inflow_scene)
    assert result.metrics.n_particles == 20
    solver = result.metrics.solver_frame()
    assert len(solver) > 0
    assert (solver["max_density_ratio"] >= 0).all()
    assert solver["asymmetry"].isna().all()


def test_asymmetry_audit(inflow_scene):
    config = Config(dt=0.1, t_max=2.0, seed=4, asymmetry_audit=True, initial_particles=5,
                    initial_region=[4.0, 2.0, 8.0, 6.0])
    solver = run(config, inflow_scene).metrics.solver_frame()
    assert len(solver) == 20
    assert solver["asymmetry"].notna().all()
    assert (solver["asymmetry"] >= 0).all()


def test_runs_are_reproducible(tmp_path, inflow_scene):
    config = Config(dt=0.1, t_max=3.0, seed=9, noise_sigma=0.1, correct_min_distance=True)
    outputs = []
    for name in ("a", "b"):
        result = run(config, inflow_scene)
        outputs.append(export_metrics(result.metrics, tmp_path / name, config=config.to_dict(),
                                      seed=config.seed, scene=inflow_scene.to_dict()))
    for label, path in outputs[0].items():
        assert path.read_bytes() == outputs[1][label].read_bytes()


def test_solver_failure_reports_step(monkeypatch, inflow_scene):
    def broken(*args, **kwargs):
        raise LcpSolverError("zero pivot")

    monkeypatch.setattr(simulator, "pgs_solve", broken)
    config = Config(dt=0.1, t_max=2.0, initial_particles=3, initial_region=[2.0, 2.0, 4.0, 4.0])
    with pytest.raises(SimulationError) as info:
        run(config, inflow_scene)
    assert info.value.step == 0
    assert "zero pivot" in str(info.value)


def test_bad_initial_region(open_scene):
    config = Config(initial_particles=5, initial_region="corner")
    with pytest.raises(ConfigError):
        run(config, open_scene)


def test_unreachable_cells_have_no_planned_time():
    scene = SceneSpec(10.0, 10.0, obstacles=(Rect(4.0, 0.0, 5.0, 10.0),),
                      exits=(Exit(Rect(9.0, 0.0, 10.0, 10.0)),))
    config = Config(mode="eikonal", dt=0.2, t_max=1.0, initial_particles=10,
                    initial_region=[0.0, 0.0, 3.0, 10.0])
    frame = run(config, scene).metrics.particle_frame()
    assert frame["planned_t"].isna().all()
    assert frame["delay"].isna().all()


def test_boxed_in_spawns_stay_put_without_aborting():
    pocket = (Rect(1.0, 1.0, 7.0, 2.0), Rect(1.0, 6.0, 7.0, 7.0),
              Rect(1.0, 2.0, 2.0, 6.0), Rect(6.0, 2.0, 7.0, 6.0))
    scene = SceneSpec(20.0, 10.0, obstacles=pocket,
                      entrances=(Entrance(Rect(0.0, 8.0, 1.0, 10.0), rate=2.0, capacity=4),),
                      exits=(Exit(Rect(19.0, 0.0, 20.0, 10.0)),), name="pocket")
    config = Config(mode="visgraph_uic", uic_enabled=False, dt=0.1, t_max=3.0, seed=4,
                    initial_particles=6, initial_region=[3.0, 3.0, 5.0, 5.0])
    result = run(config, scene)
    frame = result.metrics.particle_frame()

    trapped = frame.iloc[:6]
    assert trapped["planned_t"].isna().all()
    assert np.allclose(result.particles.positions[:6], trapped[["spawn_x", "spawn_y"]].to_numpy())
    assert result.particles.active[:6].all()

    # entrance spawns outside the pocket still get a route
    if len(frame) > 6:
        assert frame["planned_t"].iloc[6:].notna().all()
