"""Exception types shared across the library."""


class SelfModError(Exception):
    """Base class for all library errors."""


class NonFiniteError(SelfModError):
    """A library-constructed value contains NaN or Inf. Carries the op name."""

    def __init__(self, op_name, message=None):
        self.op_name = op_name
        super().__init__(message or f"non-finite value produced by op '{op_name}'")


class UnsupportedError(SelfModError):
    """An operation outside the registered primitive set was requested."""


class OrderTooHighError(SelfModError):
    """Requested Taylor order exceeds the configured maximum."""


class ShapeError(SelfModError):
    """Tensor shapes are incompatible for the requested operation."""


class KindError(SelfModError):
    """Contexts of different kinds (finite vs functional) were mixed."""


class InputError(SelfModError):
    """A required auxiliary input is missing or malformed."""


class ConfigError(SelfModError):
    """Invalid configuration value."""


class DataError(SelfModError):
    """Invalid or empty dataset."""


class FormatError(SelfModError):
    """A serialized file is malformed (bad magic, version, or truncation)."""


class CompatError(SelfModError):
    """Checkpoint and dataset are incompatible."""


class StiffnessError(SelfModError):
    """Adaptive integrator step size underflowed."""


class BlowupError(SelfModError):
    """Integration produced a non-finite state. Carries the last finite time."""

    def __init__(self, t_last, message=None):
        self.t_last = t_last
        super().__init__(message or f"state blew up; last finite time t={t_last}")


class TrainingAborted(SelfModError):
    """Training stopped on a non-finite loss; carries the last finite state."""

    def __init__(self, state, checkpoint_path=None, message=None):
        self.state = state
        self.checkpoint_path = checkpoint_path
        super().__init__(message or "training aborted on non-finite value")
