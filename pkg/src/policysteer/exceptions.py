class PolicySteerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PolicySteerError, ValueError):
    """Invalid configuration, parameter, or input contract."""


class TrainingError(PolicySteerError, RuntimeError):
    """Training diverged or could not start."""


class CheckpointError(PolicySteerError, ValueError):
    """A persisted artifact failed validation on load."""


class VerifierError(PolicySteerError, RuntimeError):
    """A verifier backend failed or returned a malformed response.

    ``raw`` holds the offending response body (or ``None`` if nothing came back).
    """

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class SteeringError(PolicySteerError, RuntimeError):
    """A failure inside the steering loop; ``trace`` holds the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
