class LiftError(Exception):
    """Base class for errors raised by this package."""


class PreconditionError(LiftError, ValueError):
    pass


class ConvergenceError(LiftError, ArithmeticError):
    def __init__(self, message: str, iterations: int | None = None):
        super().__init__(message)
        self.iterations = iterations


class GradientError(LiftError, FloatingPointError):
    def __init__(self, message: str, position: tuple[int, int]):
        super().__init__(message)
        self.position = position


class ConfigError(LiftError, ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class CheckpointError(LiftError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
