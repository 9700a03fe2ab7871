"""Exception hierarchy shared by every subpackage."""


class ECTError(Exception):
    """Base class for all errors raised by ectnet."""


class ShapeError(ECTError, ValueError):
    """Incompatible tensor shapes or channel arithmetic."""


class NonFiniteError(ECTError, FloatingPointError):
    """A NaN or Inf appeared in a forward or backward pass."""


class GraphError(ECTError, RuntimeError):
    """Misuse of the autodiff graph (e.g. backward before forward)."""


class ConfigError(ECTError, ValueError):
    """Invalid architecture, training or generator configuration."""


class DataError(ECTError, ValueError):
    """Malformed dataset, container file or split request."""


class CheckpointError(ECTError):
    """Base for checkpoint read/write failures."""


class CorruptCheckpointError(CheckpointError, DataError):
    pass


class CheckpointVersionError(CheckpointError, DataError):
    pass


class CheckpointMismatchError(CheckpointError, ShapeError):
    """Checkpoint arrays do not fit the target network."""


class DivergenceError(ECTError, RuntimeError):
    """The learning-rate sweep diverged before yielding a usable curve."""


class ResumeError(ECTError, RuntimeError):
    """A state checkpoint cannot continue the requested run."""
