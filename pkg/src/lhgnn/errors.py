"""Exception types shared across the package.

Everything numeric or structural raises one of these so callers can
distinguish bad shapes from bad arguments from bad files without string
matching.
"""


class DimensionError(ValueError):
    """Array shapes or extents are incompatible with the operation."""


class ParameterError(ValueError):
    """An argument value is outside the operation's domain."""


class ConfigError(ValueError):
    """A configuration file or object is malformed or inconsistent."""


class FormatError(ValueError):
    """A serialized file (WAV, feature cache, manifest, checkpoint) is invalid."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericsError(ArithmeticError):
    """A primitive produced or received non-finite values."""


class MetricUndefinedError(ValueError):
    """A metric has no defined value on the given inputs (e.g. mAP with no positives)."""


# every package-specific failure a CLI run can hit
PACKAGE_ERRORS = (
    DimensionError,
    ParameterError,
    ConfigError,
    FormatError,
    StateError,
    NumericsError,
    MetricUndefinedError,
)
