"""Exception types shared across the package."""


class StemDegradeError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(StemDegradeError, ValueError):
    pass


class DimensionError(StemDegradeError, ValueError):
    pass


class OutOfRangeError(InvalidParameterError):
    pass


class SingularTransformError(StemDegradeError, ArithmeticError):
    pass


class DegenerateInputError(StemDegradeError, ArithmeticError):
    """Raised when an input carries no usable signal (e.g. constant image under NCC)."""


class TrainingDivergedError(StemDegradeError, ArithmeticError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss


class FormatError(StemDegradeError, OSError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
