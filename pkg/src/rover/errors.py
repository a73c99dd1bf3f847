"""Exception types shared across the package."""


class RejectedInput(ValueError):
    """An argument violates an operation's precondition."""


class IngestionError(ValueError):
    """A data file could not be parsed."""


class GenerationError(RuntimeError):
    """Random task or landscape generation failed."""


class ObservationError(RuntimeError):
    """A grid observation hit a non-finite field value."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Training diverged; ``last_good`` holds the last finite checkpoint."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class CheckpointError(IOError):
    """Base class for checkpoint load failures."""


class CheckpointHeaderError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCountError(CheckpointError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass
