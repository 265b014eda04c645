"""Exception hierarchy for the codec.

Every error raised on purpose by this package derives from ScodecError so
callers can catch one type at the boundary. The CLI maps subtrees to exit
codes: I/O problems exit 1, malformed inputs or misuse exit 2, and

model/bitstream mismatches exit 3.
"""


class ScodecError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(ScodecError):
    """Invalid configuration value or incompatible tensor geometry."""


class InternalError(ScodecError):
    """A precondition the pipeline itself should have guaranteed was violated."""


class SequencingError(ScodecError):
    """Autoregressive steps driven out of order or with inconsistent state."""


class WeightFormatError(ScodecError):
    """Weight file is malformed or fails its integrity digest."""


class WeightSchemaError(ScodecError):
    """Weight store is missing a parameter or holds one with the wrong shape."""


class ContainerError(ScodecError):
    """Bitstream container is malformed."""


class ModelMismatchError(ScodecError):
    """Container was produced by a different model or format version."""


class CodingError(ScodecError):
    """Range coder misuse (invalid interval, bad table)."""


class DecodeError(CodingError):
    """Compressed stream is truncated or internally inconsistent."""
