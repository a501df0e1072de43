"""Exception hierarchy shared across the toolkit.

The CLI maps these onto process exit codes: ConfigError (and argparse usage
errors) exit 1, DataError and its subclasses exit 2, ThresholdError exit 3.
"""


class ProsovcError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ProsovcError):
    """Invalid run configuration or bad command usage."""


class DataError(ProsovcError):
    """Invalid or missing data: audio files, manifests, features, checkpoints."""


class CacheMissError(DataError):
    """Requested feature record is not present in the cache."""


class StaleCacheError(DataError):
    """Cached feature record was produced under a different extraction config."""


class ConfigMismatchError(DataError):
    """Checkpoint was trained under a config incompatible with the current one."""


class ThresholdError(ProsovcError):
    """A quality threshold was violated in eval --check mode."""
