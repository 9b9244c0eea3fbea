"""Exception types shared across the package."""


class EpimotionError(Exception):
    """Base class for all package errors."""


class ArgError(EpimotionError, ValueError):
    """Invalid argument values or inconsistent shapes/counts."""


class ConfigError(EpimotionError, ValueError):
    """Invalid or unsatisfiable configuration."""


class FormatError(EpimotionError, ValueError):
    """Malformed file: bad magic, truncated payload, unparsable header."""


class DataError(EpimotionError, ValueError):
    """Well-formed file whose payload violates a data contract (NaN/Inf)."""


class DegenerateError(EpimotionError, RuntimeError):
    """A minimal sample or point configuration admits no unique solution."""


class EpipoleError(EpimotionError, RuntimeError):
    """Point-line distance is undefined (zero or infinite line)."""


class InsufficientDataError(EpimotionError, RuntimeError):
    """Fewer data points than the minimal sample size."""


class EstimationError(EpimotionError, RuntimeError):
    """Robust estimation exhausted its budget without a valid model."""
