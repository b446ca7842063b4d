import os
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

import numpy as np
import pytest

from config.settings import Config
from modules.scene import Entrance, Exit, Grid, Rect, SceneSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def open_scene():
    """20 x 10 m room with an exit strip along the right wall"""
    return SceneSpec(20.0, 10.0, exits=(Exit(Rect(19.0, 0.0, 20.0, 10.0)),), name="open")


@pytest.fixture
def block_scene():
    """20 x 20 m room, one square obstacle in the middle, exit on the right wall"""
    return SceneSpec(
        20.0, 20.0,
        obstacles=(Rect(8.0, 8.0, 12.0, 12.0),),
        exits=(Exit(Rect(19.0, 0.0, 20.0, 20.0)),),
        name="block",
    )


@pytest.fixture
def inflow_scene():
    return SceneSpec(
        12.0, 8.0,
        entrances=(Entrance(Rect(0.0, 2.0, 1.0, 6.0), rate=4.0, capacity=20),),
        exits=(Exit(Rect(11.0, 2.0, 12.0, 6.0), cap=2.0),),
        name="inflow",
    )


@pytest.fixture
def small_grid():
    return Grid(4, 3, 1.0, 1.0)


@pytest.fixture
def quick_config(tmp_path):
    return Config(dt=0.1, t_max=5.0, seed=3, output_dir=str(tmp_path / "out"))


def repo_path(*parts):
    return os.path.join(ROOT, *parts)
