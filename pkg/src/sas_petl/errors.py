"""Exception hierarchy. Each family maps to a CLI exit code."""


class SasError(Exception):
    exit_code = 1


class ConfigError(SasError, ValueError):
    exit_code = 2


class DataError(SasError, ValueError):
    exit_code = 3


class TrainingError(SasError, RuntimeError):
    exit_code = 4

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DimensionError(SasError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 4


class GraphError(SasError, RuntimeError):
    """Misuse of the autodiff tape (double backward, non-scalar loss...)."""

    exit_code = 4


class CheckpointError(SasError, OSError):
    exit_code = 3


class CheckpointMissingError(CheckpointError, FileNotFoundError):
    pass


class CheckpointLengthError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class IdxFormatError(DataError):
    pass


class IdxMagicError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass
