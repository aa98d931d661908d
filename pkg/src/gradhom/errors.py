"""Exception hierarchy shared by all gradhom modules."""


class GradhomError(Exception):
    """Base class for every error raised by the package."""


class MaterialError(GradhomError):
    """Invalid or non-elliptic material parameters."""


class GeometryError(GradhomError):
    """Inclusion geometry violates the compact-inclusion requirement."""


class PeriodicityError(GradhomError):
    """A field construction would break Y-periodicity."""


class ConsistencyError(GradhomError):
    """Intrinsic lengths are mutually inconsistent (chirality without second gradient)."""


class UnsupportedRegimeError(GradhomError):
    """The requested scaling regime cannot be homogenized."""


class AlignmentError(GradhomError):
    """Fine grid and epsilon-cells do not nest."""


class SolverError(GradhomError):
    """Iterative solver failed to reach its tolerance.

    The residual history is kept on ``history`` for post-mortem inspection.
    """

    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class CoercivityError(GradhomError):
    """Assembled bilinear form is not positive definite."""

    def __init__(self, message, margin):
        super().__init__(message)
        self.margin = margin


class ConfigError(GradhomError):
    """Malformed run configuration."""
