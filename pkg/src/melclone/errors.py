"""Exception types shared across the library."""


class MelcloneError(Exception):
    """Base class for all library errors."""


class ConfigError(MelcloneError):
    """Invalid configuration (frequency ranges, level counts, unknown keys)."""


class InputError(MelcloneError):
    """Invalid input data (empty signals, out-of-range ids, bad durations)."""


class ShapeError(MelcloneError):
    """Tensor shape mismatch between operands."""


class AlignmentError(MelcloneError):
    """Durations do not align with the frame axis they describe."""


class StateError(MelcloneError):
    """Operation requires state that is missing (e.g. a trained checkpoint)."""


class CheckpointError(MelcloneError):
    """Checkpoint file is truncated, corrupt, or incompatible."""


class DivergenceError(MelcloneError):
    """Training produced a non-finite loss."""


class NonFiniteError(MelcloneError):
    """A numeric operation produced NaN or Inf."""

    def __init__(self, op_name: str):
        super().__init__(f"non-finite values produced by op '{op_name}'")
        self.op_name = op_name
