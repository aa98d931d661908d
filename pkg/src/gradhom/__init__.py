"""Periodic homogenization of second-gradient elasticity with chiral size effects."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AlignmentError,
    CoercivityError,
    ConfigError,
    ConsistencyError,
    GeometryError,
    GradhomError,
    MaterialError,
    PeriodicityError,
    SolverError,
    UnsupportedRegimeError,
)

__all__ = [
    "__version__",
    "AlignmentError",
    "CoercivityError",
    "ConfigError",
    "ConsistencyError",
    "GeometryError",
    "GradhomError",
    "MaterialError",
    "PeriodicityError",
    "SolverError",
    "UnsupportedRegimeError",
    "data_path",
]


def data_path(name):
    """Path of a shipped example file in ``gradhom/data``."""
    from importlib.resources import files

    return files(__name__).joinpath("data", name)
