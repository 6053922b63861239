"""Exception hierarchy shared by all solver stages."""

from __future__ import annotations


class SerrinLabError(Exception):
    """Base class for every error raised by the package."""


class NonPositiveProfile(SerrinLabError, ValueError):
    pass


class UnsupportedDimension(SerrinLabError, ValueError):
    pass


class BadSlab(SerrinLabError, ValueError):
    pass


class SingularGrid(SerrinLabError):
    pass


class SolverDivergence(SerrinLabError):
    pass


class NoBifurcationInRange(SerrinLabError):
    pass


class NewtonStagnation(SerrinLabError):
    """Newton iteration stopped making progress.

    ``diagnostics`` carries the residual history and the parameter value
    (when continuing a branch) at which the failure happened.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class NotSerrin(SerrinLabError):
    pass


class NonConvergence(SerrinLabError):
    pass


class CEpsNonPositive(SerrinLabError):
    pass


class UnboundedSuspected(SerrinLabError):
    pass


class ConfigError(SerrinLabError, ValueError):
    pass
