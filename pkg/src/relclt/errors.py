class RelCLTError(Exception):
    """Base class for package errors."""


class CapabilityError(RelCLTError):
    """Requested (process, function class) combination has no exact oracle."""


class SingularCovarianceError(RelCLTError):
    """Covariance matrix could not be factorized even after maximal jitter."""


class ConfigError(RelCLTError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
