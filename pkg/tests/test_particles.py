"""
Spawning, inflow, stepping, exit caps and the minimum-distance bookkeeping
"""

import math

import numpy as np
import pytest
from scipy import stats

from modules.particles import (
    InflowState,
    ParticleSet,
    RngState,
    SpeedDistribution,
    add_velocity_noise,
    apply_exit_cap,
    clamp_speeds,
    correct_min_distance,
    max_density_from_min_distance,
    min_distance_report,
    nearest_neighbour_distances,
    poisson_inflow,
    spawn_disc,
    spawn_in_rect,
    spawn_uniform,
    step_positions,
)
from modules.scene import Entrance, Exit, Rect, SceneSpec
from utils.utility import ConfigError, SpawnError


def test_max_density_examples():
    assert max_density_from_min_distance(0.0, 0.5) == pytest.approx(1.1547, abs=1e-4)
    assert max_density_from_min_distance(0.2, 0.2) == pytest.approx(
        4.0 * max_density_from_min_distance(0.4, 0.4))
    with pytest.raises(ConfigError):
        max_density_from_min_distance(0.0, 0.0)


@pytest.mark.parametrize("kind", ["normal", "uniform", "constant"])
def test_speed_distributions(kind):
    dist = SpeedDistribution(kind=kind, mean=1.3, std=0.2, low=1.0, high=1.6)
    speeds = dist.draw(500, RngState(2))
    assert speeds.shape == (500,)
    assert (speeds >= 0.05).all()
    if kind == "uniform":
        assert ((speeds >= 1.0) & (speeds <= 1.6)).all()
    if kind == "constant":
        assert (speeds == 1.3).all()


def test_unknown_speed_distribution():
    with pytest.raises(ConfigError):
        SpeedDistribution(kind="lognormal").draw(3, RngState(0))


def test_spawn_uniform_is_free_and_deterministic(block_scene):
    a = spawn_uniform(300, block_scene, RngState(5))
    b = spawn_uniform(300, block_scene, RngState(5))
    assert len(a) == 300
    assert block_scene.is_free(a.positions).all()
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.max_speeds, b.max_speeds)
    assert a.n_active == 300


def test_spawn_fails_without_free_area():
    scene = SceneSpec(4.0, 4.0, obstacles=(Rect(0.0, 0.0, 4.0, 4.0),))
    with pytest.raises(SpawnError):
        spawn_uniform(5, scene, RngState(0))


def test_spawn_in_rect(block_scene):
    p = spawn_in_rect(50, Rect(1.0, 1.0, 5.0, 3.0), block_scene, RngState(1))
    assert Rect(1.0, 1.0, 5.0, 3.0).contains(p.positions).all()


def test_spawn_disc_stays_in_disc():
    scene = SceneSpec(40.0, 60.0, exits=(Exit(Rect(39.0, 25.0, 40.0, 35.0)),))
    p = spawn_disc(800, (20.0, 30.0), 7.0, scene, RngState(9))
    assert (np.hypot(p.positions[:, 0] - 20.0, p.positions[:, 1] - 30.0) <= 7.0).all()
    assert len(p) == 800
    assert scene.is_free(p.positions).all()
    radius = np.hypot(p.positions[:, 0] - 20.0, p.positions[:, 1] - 30.0)
    # the crowd fills the disc, so its mean density is n over the disc area
    assert radius.max() > 6.95
    assert len(p) / (math.pi * radius.max() ** 2) == pytest.approx(5.2, rel=0.02)


def test_spawn_uniform_passes_chi_square():
    scene = SceneSpec(10.0, 10.0)
    p = spawn_uniform(10_000, scene, RngState(12))
    counts, _, _ = np.histogram2d(p.positions[:, 0], p.positions[:, 1], bins=5, range=[[0, 10], [0, 10]])
    assert counts.sum() == 10_000
    assert stats.chisquare(counts.ravel()).pvalue > 1e-3


def test_poisson_inflow_statistics():
    gen = np.random.default_rng(2024)
    unit = Entrance(Rect(0.0, 0.0, 1.0, 1.0), rate=20.0)
    counts = np.array([poisson_inflow(unit, 0.05, gen) for _ in range(100_000)])
    assert np.mean(counts == 0) == pytest.approx(math.exp(-1.0), abs=0.01)

    half = Entrance(Rect(0.0, 0.0, 1.0, 1.0), rate=10.0)
    counts = np.array([poisson_inflow(half, 0.05, gen) for _ in range(100_000)])
    assert counts.mean() == pytest.approx(0.5, abs=0.01)


def test_poisson_inflow_respects_capacity():
    entrance = Entrance(Rect(0.0, 0.0, 1.0, 1.0), rate=1000.0, capacity=10)
    gen = np.random.default_rng(0)
    assert poisson_inflow(entrance, 1.0, gen, spawned_so_far=0) == 10
    assert poisson_inflow(entrance, 1.0, gen, spawned_so_far=10) == 0
    assert poisson_inflow(Entrance(Rect(0, 0, 1, 1), rate=0.0), 1.0, gen) == 0


def test_inflow_state_exhausts(inflow_scene):
    inflow = InflowState(inflow_scene)
    rng = RngState(4)
    assert not inflow.exhausted
    for _ in range(200):
        batch = inflow.step(0.5, rng, SpeedDistribution())
        assert inflow_scene.entrances[0].rect.contains(batch.positions).all()
    assert inflow.total_spawned == 20
    assert inflow.exhausted


def moving(positions, velocities, max_speed=10.0):
    p = ParticleSet.create(positions, max_speed)
    p.velocities[:] = velocities
    return p


def test_step_free_motion(open_scene):
    p = moving([[2.0, 3.0]], [[1.0, 0.5]])
    exits = step_positions(p, 0.4, open_scene)
    assert np.allclose(p.positions[0], [2.4, 3.2])
    assert exits == {0: []}


def test_step_stops_on_obstacle_face():
    scene = SceneSpec(10.0, 10.0, obstacles=(Rect(2.0, 1.0, 4.0, 3.0),))
    p = moving([[1.0, 2.0]], [[2.0, 0.0]])
    step_positions(p, 1.0, scene)
    assert p.positions[0, 0] == 2.0
    assert p.positions[0, 1] == pytest.approx(2.0)
    assert not scene.in_obstacle(p.positions).any()


def test_step_clips_to_domain_and_reports_exit(open_scene):
    p = moving([[19.5, 5.0], [5.0, 9.8]], [[2.0, 0.0], [0.0, 1.0]])
    exits = step_positions(p, 1.0, open_scene)
    assert p.positions[0].tolist() == [20.0, 5.0]
    assert p.positions[1].tolist() == [5.0, 10.0]
    assert exits == {0: [0]}


def test_inactive_particles_do_not_move(open_scene):
    p = moving([[2.0, 3.0], [4.0, 4.0]], [[1.0, 0.0], [1.0, 0.0]])
    p.active[1] = False
    step_positions(p, 1.0, open_scene)
    assert p.positions[1].tolist() == [4.0, 4.0]


def test_step_rejects_bad_dt(open_scene):
    with pytest.raises(ValueError):
        step_positions(ParticleSet(), 0.0, open_scene)


def test_exit_cap_carries_fractional_budget():
    ex = Exit(Rect(0.0, 0.0, 1.0, 1.0), cap=1.0)
    removed, carry = apply_exit_cap(ex, [4, 2], 0.5, 0.0)
    assert removed == [] and carry == pytest.approx(0.5)
    removed, carry = apply_exit_cap(ex, [4, 2], 0.5, carry)
    assert removed == [2] and carry == pytest.approx(0.0)


def test_exit_cap_long_run_rate():
    ex = Exit(Rect(0.0, 0.0, 1.0, 1.0), cap=2.0)
    removed, carry = apply_exit_cap(ex, list(range(10)), 0.05, 0.0)
    assert removed == [] and carry == pytest.approx(0.1)

    total, carry = 0, 0.0
    for _ in range(200):
        removed, carry = apply_exit_cap(ex, list(range(10)), 0.05, carry)
        total += len(removed)
    assert abs(total - 20) <= 1


def test_uncapped_exit_takes_everyone():
    removed, carry = apply_exit_cap(Exit(Rect(0, 0, 1, 1)), [3, 1, 2], 0.1)
    assert removed == [1, 2, 3] and carry == 0.0


def test_clamp_and_noise():
    p = moving([[1.0, 1.0], [2.0, 2.0]], [[3.0, 4.0], [0.1, 0.0]], max_speed=1.0)
    clamp_speeds(p)
    assert np.hypot(*p.velocities[0]) == pytest.approx(1.0)
    assert p.velocities[1].tolist() == [0.1, 0.0]

    add_velocity_noise(p, 0.3, RngState(0))
    assert (np.hypot(p.velocities[:, 0], p.velocities[:, 1]) <= 1.0 + 1e-12).all()
    with pytest.raises(ValueError):
        add_velocity_noise(p, -1.0, RngState(0))


def test_correct_min_distance_separates_pair(open_scene):
    p = moving([[5.0, 5.0], [5.1, 5.0], [10.0, 5.0]], np.zeros((3, 2)))
    correct_min_distance(p, 0.25, open_scene, RngState(0))
    assert np.hypot(*(p.positions[1] - p.positions[0])) == pytest.approx(0.25)
    assert p.positions[2].tolist() == [10.0, 5.0]


def test_correct_min_distance_coincident_pair(open_scene):
    p = moving([[5.0, 5.0], [5.0, 5.0]], np.zeros((2, 2)))
    correct_min_distance(p, 0.2, open_scene, RngState(3))
    assert np.hypot(*(p.positions[1] - p.positions[0])) == pytest.approx(0.2)


def test_min_distance_report():
    p = ParticleSet.create([[0.0, 0.0], [0.3, 0.0], [5.0, 5.0]], 1.0)
    assert nearest_neighbour_distances(p.positions) == pytest.approx([0.3, 0.3, math.hypot(4.7, 5.0)])
    assert min_distance_report(p, [0.2, 0.5, 10.0]) == {0.2: 0, 0.5: 2, 10.0: 3}


def test_velocity_noise_standard_deviation():
    n = 100_000
    p = ParticleSet.create(np.zeros((n, 2)), 100.0)
    add_velocity_noise(p, 0.1, RngState(5))
    assert np.std(p.velocities[:, 0]) == pytest.approx(0.1, abs=0.005)
    assert np.std(p.velocities[:, 1]) == pytest.approx(0.1, abs=0.005)
    assert abs(np.mean(p.velocities)) < 0.005


def test_min_distance_report_matches_all_pairs():
    gen = np.random.default_rng(31)
    p = ParticleSet.create(gen.uniform(0.0, 10.0, size=(100, 2)), 1.0)
    p.active[::9] = False
    radii = [0.1, 0.25, 0.5, 1.0, 2.0]

    pts = p.positions[p.active]
    dist = np.hypot(pts[:, None, 0] - pts[None, :, 0], pts[:, None, 1] - pts[None, :, 1])
    np.fill_diagonal(dist, np.inf)
    nearest = dist.min(axis=1)
    expected = {r: int(np.count_nonzero(nearest < r)) for r in radii}
    assert min_distance_report(p, radii) == expected
    assert expected[2.0] > expected[0.25]


def test_extend_returns_new_ids():
    p = ParticleSet.create([[1.0, 1.0]], 1.0)
    ids = p.extend(ParticleSet.create([[2.0, 2.0], [3.0, 3.0]], 1.2))
    assert ids.tolist() == [1, 2]
    assert len(p) == 3 and p.n_active == 3
