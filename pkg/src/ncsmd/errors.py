"""Exception types raised across the package."""


class NCSMDError(Exception):
    """Base class for all package errors."""


class BoundaryViolation(NCSMDError):
    """A point is not strictly inside the action set."""


class NotPositiveDefinite(NCSMDError):
    """A matrix expected to be SPD has a non-positive eigenvalue."""


class InvalidRange(NCSMDError):
    """A link function cannot be used on the requested range."""


class AssumptionViolation(NCSMDError):
    """A modelling assumption failed its numerical check."""


class WrongLink(NCSMDError):
    """The operation is only valid for a specific link function."""


class NoConvergence(NCSMDError):
    """An iterative solver hit its iteration cap."""


class EmptyTrajectory(NCSMDError):
    """The trajectory holds no steps."""


class DegenerateInput(NCSMDError):
    """Input data cannot support the requested fit."""


class ConfigError(NCSMDError):
    """An experiment configuration failed validation.

    ``path`` names the offending field, e.g. ``instance.link``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")
