"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
InternalError -> 3.
"""


class ProxyfamError(Exception):
    """Base class for all package errors."""


class ConfigError(ProxyfamError):
    """Invalid configuration or usage."""


class DataError(ProxyfamError):
    """Malformed or inconsistent input data."""


class GraphFormatError(DataError):
    """A graph file does not conform to the line-oriented graph format."""


class ManifestError(DataError):
    """A corpus manifest line is malformed or inconsistent."""


class ModelFormatError(DataError):
    """A binary model or feature-cache file is corrupt or incompatible."""


class InternalError(ProxyfamError):
    """An internal invariant was violated."""
