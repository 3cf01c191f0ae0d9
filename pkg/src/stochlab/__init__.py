"""Stochastic market-dynamics laboratory."""
from importlib.resources import files

from stochlab._accel import backend
from stochlab.errors import DataError, NumericalError, StochLabError

__all__ = ["DataError", "NumericalError", "StochLabError", "backend", "fixture_path"]


def fixture_path(name: str = "aapl_like.csv"):
    """Path of a bundled price fixture."""
    return files("stochlab") / "data" / name
