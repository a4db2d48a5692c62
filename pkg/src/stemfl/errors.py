"""Exception types raised across the package."""


class ConfigurationError(ValueError):
    """Invalid sizes, ranges or experiment settings.

    ``field`` names the offending configuration key when there is one.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DegenerateScheduleError(ConfigurationError):
    """The theoretical step-size law is undefined (zero intra-node variance)."""


class UsageError(IndexError):
    """An oracle was called with arguments outside its domain."""


class EstimationError(RuntimeError):
    """A smoothness/variance estimate could not be formed from the probes."""


class ProtocolError(RuntimeError):
    """A federated step was invoked out of the round structure."""


class FitError(ValueError):
    """Too few usable points for a log-log complexity fit."""
