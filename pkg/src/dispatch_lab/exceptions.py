class ConfigError(ValueError):
    """Invalid configuration, fleet profile, or scenario/grid mismatch."""


class SchemaError(ConfigError):
    """A trip log lacks a required column."""

    def __init__(self, column, path=None):
        self.column = column
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column {column!r}{where}")


class InvalidTargetError(ValueError):
    """Requested LEV share is below the fleet's current share."""


class ContractViolation(RuntimeError):
    """An operation was called with inputs that break its contract."""


class OracleSizeError(ValueError):
    """Batch too large for exhaustive search."""


class NormalizationError(ValueError):
    def __init__(self, metric, reason="absent or zero in baseline"):
        self.metric = metric
        super().__init__(f"cannot normalize {metric!r}: {reason}")
