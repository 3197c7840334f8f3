"""Exception types shared across the package."""


class VoltraError(Exception):
    """Base class for all errors raised by voltra."""


class DimMismatchError(VoltraError):
    """Matrix dimensions do not satisfy an operation's contract."""


class SingularMatrixError(VoltraError):
    """Matrix is singular, or numerically indistinguishable from singular."""


class ShapeMismatchError(VoltraError):
    """Operands of a tape operation have incompatible shapes."""


class NonScalarRootError(VoltraError):
    """backward() was started from a node whose value is not 1x1."""


class ZeroMomentError(VoltraError):
    """A moment of inertia is zero; reciprocals are undefined."""


class NewtonDivergedError(VoltraError):
    """Newton iteration failed to reach tolerance within the step budget."""


class TrajectoryTooShortError(VoltraError):
    """Trajectory has too few points for the requested windows."""


class ZeroTargetError(VoltraError):
    """Relative error is undefined when the target has zero norm."""


class NonFiniteGradientError(VoltraError):
    """A gradient became NaN or infinite during training."""


class EmptyDatasetError(VoltraError):
    """Training was requested on an empty window set."""


class NonFiniteStateError(VoltraError):
    """A rollout produced a NaN or infinite state."""


class CheckpointFormatError(VoltraError):
    """Checkpoint file is malformed or has an unsupported format version."""
