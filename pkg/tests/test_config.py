"""
Configuration loading, overrides and validation
"""

import pytest

from conftest import repo_path
from config.settings import Config
from utils.logger import resolve_log_level
from utils.utility import ConfigError


def test_defaults_validate():
    config = Config().validate()
    assert config.mode == "visgraph_uic"
    assert config.resolved_max_density() == pytest.approx(2.733, abs=1e-3)
    assert config.resolved_density_max() == config.resolved_max_density()
    assert config.resolved_margin() == pytest.approx(0.4)
    assert config.resolved_obstacle_clearance() == 1.0


def test_explicit_max_density_wins():
    assert Config(max_density=4.0).resolved_max_density() == 4.0


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError, match="colour"):
        Config.from_dict({"dt": 0.1, "colour": "red"})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        Config.from_file(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("dt = = 1")
    with pytest.raises(ConfigError):
        Config.from_file(bad)


def test_file_values_override_defaults(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('mode = "eikonal"\ndt = 0.2\nmde_radii = [0.3]\n')
    config = Config.from_file(path)
    assert config.mode == "eikonal"
    assert config.dt == 0.2
    assert config.mde_radii == [0.3]
    assert config.t_max == 60.0


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CROWDSIM_SEED", "17")
    monkeypatch.setenv("CROWDSIM_OUTPUT_DIR", "elsewhere")
    config = Config().apply_env()
    assert config.seed == 17
    assert config.output_dir == "elsewhere"


def test_invalid_environment_value(monkeypatch):
    monkeypatch.setenv("CROWDSIM_SEED", "seven")
    with pytest.raises(ConfigError):
        Config().apply_env()


@pytest.mark.parametrize(
    "overrides",
    [
        {"dt": 0.0},
        {"mode": "teleport"},
        {"kernel": "cubic"},
        {"smoothing_length": "big"},
        {"smoothing_length": -1.0},
        {"speed_min": 2.0, "speed_max": 1.0},
        {"lookahead_points": 0},
        {"pgs_max_iterations": 0},
        {"density_min": 3.0},
        {"mde_radii": [0.5, -1.0]},
        {"noise_sigma": -0.1},
    ],
)
def test_validation_failures(overrides):
    with pytest.raises(ConfigError):
        Config(**overrides).validate()


def test_auto_smoothing_length():
    config = Config(smoothing_length="auto", cell_size=1.0, density_min=0.1).validate()
    h = config.resolved_smoothing_length()
    assert h > 0
    assert config.kernel_spec().h == h


def test_parameter_objects():
    config = Config(cost_gamma=2.0, pgs_max_iterations=40, crowd_speed=1.2)
    assert config.cost_weights().gamma == 2.0
    assert config.pressure_params().iteration_cap(100) == 40
    assert config.pressure_params().speed_max == 1.2
    assert Config().pressure_params().iteration_cap(100) == 1000
    assert config.planner_params().margin == pytest.approx(0.4)
    assert config.speed_distribution_spec().kind == "normal"


@pytest.mark.parametrize("name", ["funnel", "corridor", "plaza", "crossing"])
def test_bundled_configs_load(name):
    config = Config.from_file(repo_path("configs", f"{name}.toml")).validate()
    assert config.output_dir.endswith(name)


def test_log_level_from_environment(monkeypatch):
    monkeypatch.setenv("CROWDSIM_LOG_LEVEL", "debug")
    assert resolve_log_level() == "DEBUG"
    monkeypatch.setenv("CROWDSIM_LOG_LEVEL", "chatty")
    assert resolve_log_level() == "INFO"
