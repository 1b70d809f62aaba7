"""Exception hierarchy shared by all damcast modules.

The CLI maps these onto exit codes, so raising the right class matters:
ConfigError -> 64, DataError/StateError -> 65, MissingInputError -> 66,
NetworkError/EnvError -> 2.
"""


class DamcastError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(DamcastError):
    """Tensor shapes incompatible with the requested operation."""


class NumericError(DamcastError):
    """An operation produced (or was handed) a NaN or infinity."""


class GraphError(DamcastError):
    """Gradient-tape contract violation, e.g. backward on a non-scalar."""


class DataError(DamcastError):
    """Malformed or out-of-domain input data."""


class StateError(DamcastError):
    """Object used before it was put in a valid state (scaler before fit)."""


class ConfigError(DamcastError):
    """Invalid configuration file or hyperparameter value."""


class EnvError(DamcastError):
    """Required environment variable is missing or unusable."""


class NetworkError(DamcastError):
    """HTTP failure or malformed remote payload."""


class MissingInputError(DamcastError):
    """Expected file or directory does not exist."""
