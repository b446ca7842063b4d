# utils/utility.py
"""
Utility functions for the crowd simulation engine
Exception hierarchy and helpers shared across modules
"""

import os
from pathlib import Path
from typing import Iterable, Union

import numpy as np
import pandas as pd

from utils.logger import get_logger

logger = get_logger(__name__)


class CrowdSimError(Exception):
    """Base class of every error raised by the simulation engine"""
    pass


class ConfigError(CrowdSimError):
    """Invalid or unknown configuration value"""
    pass


class ScenarioParseError(CrowdSimError):
    """Scenario file is missing or malformed"""
    pass


class SceneValidationError(CrowdSimError):
    """Scenario geometry violates the scene invariants"""
    pass


class OutOfDomainError(CrowdSimError):
    """A point lies outside the simulation domain"""
    pass


class SpawnError(CrowdSimError):
    """Particles cannot be placed (no free area)"""
    pass


class KernelError(CrowdSimError):
    """Kernel parameters admit no valid smoothing length"""
    pass


class EikonalError(CrowdSimError):
    """Fast marching received an invalid goal or neighbourhood"""
    pass


class PathUnreachableError(CrowdSimError):
    """No obstacle-free path connects a point to the goal"""
    pass


class LcpSolverError(CrowdSimError):
    """The complementarity problem cannot be iterated (zero pivot, shape mismatch)"""
    pass


class SimulationError(CrowdSimError):
    """A module error raised during a time step, with the step context attached"""

    def __init__(self, message: str, step: int = None, time: float = None):
        super().__init__(message)
        self.step = step
        self.time = time

    def __str__(self) -> str:
        base = super().__str__()
        if self.step is None:
            return base
        return f"step {self.step} (t={self.time:.3f}s): {base}"


def validate_directory(path: Union[str, Path], create_if_missing: bool = True) -> bool:
    """
    Validate that directory exists and is writable

    Args:
        path: Directory path to validate
        create_if_missing: Whether to create directory if it doesn't exist

    Returns:
        Boolean indicating if directory is valid
    """
    try:
        if not os.path.exists(path):
            if create_if_missing:
                os.makedirs(path, exist_ok=True)
                logger.info(f"✅ Created directory: {path}")
            else:
                return False

        test_file = os.path.join(path, ".write_test")
        with open(test_file, 'w') as f:
            f.write("test")
        os.remove(test_file)

        return True
    except OSError as e:
        logger.error(f"❌ Directory validation failed for {path}: {e}", exc_info=True)
        return False


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    """
    Write a table with the project's CSV conventions ('.', UTF-8, LF, header, no index)

    Args:
        df: Table to write
        path: Target file

    Returns:
        The written path
    """
    path = Path(path)
    df.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')
    return path


def as_points(points: Union[Iterable[float], np.ndarray]) -> np.ndarray:
    """
    Coerce a single (x, y) pair or an (n, 2) array into an (n, 2) float array

    Returns:
        Array of shape (n, 2)
    """
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"Expected points of shape (n, 2), got {arr.shape}")
    return arr
