"""prosovc: any-to-one voice conversion toolkit.

Phonetic posteriorgrams, pitch, and an unsupervised prosody embedding go in;
LPC-vocoder acoustic features come out of a CBHG conversion model, and a
deterministic LPC synthesizer turns those back into audio.
"""

__version__ = "0.1.0"

from .errors import (
    CacheMissError,
    ConfigError,
    ConfigMismatchError,
    DataError,
    ProsovcError,
    StaleCacheError,
    ThresholdError,
)

__all__ = [
    "CacheMissError",
    "ConfigError",
    "ConfigMismatchError",
    "DataError",
    "ProsovcError",
    "StaleCacheError",
    "ThresholdError",
    "__version__",
]
