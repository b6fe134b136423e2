"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an array argument violates a precondition (non-finite, bad shape)."""


class InvalidConfigError(ValueError):
    """Raised when a configuration value is out of its legal range or unknown."""


class InvalidCallError(ValueError):
    """Raised when required arguments are missing for the requested operation."""


class CapabilityError(RuntimeError):
    """Raised when an operation is requested from an object that cannot provide it."""


class NonFiniteGradientError(RuntimeError):
    """Raised when an attack encounters a non-finite gradient.

    ``example_indices`` identifies the offending examples within the batch.
    """

    def __init__(self, message, example_indices=()):
        super().__init__(message)
        self.example_indices = list(example_indices)


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite.

    Carries the epoch/batch location and the path of the diagnostic snapshot.
    """

    def __init__(self, message, epoch=None, batch_index=None, snapshot_path=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.snapshot_path = snapshot_path


class DatasetParseError(ValueError):
    """Raised on malformed dataset files; ``byte_offset`` locates the problem."""

    def __init__(self, message, byte_offset=None):
        super().__init__(message)
        self.byte_offset = byte_offset


class IntegrityError(RuntimeError):
    """Raised when a file fails its declared checksum."""
