"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid network, mobility or simulation parameters."""


class UnstableLoadError(ValueError):
    """Requested load is at or above the throughput capacity."""


class SolverError(RuntimeError):
    """A root finder failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual


class SpecFileError(ValueError):
    """A sweep/validate spec file does not match the schema."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
