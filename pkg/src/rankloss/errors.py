"""Exception types shared across the package."""


class RanklossError(Exception):
    """Base class for all package errors."""


class InvalidInputError(RanklossError, ValueError):
    pass


class InvalidRankError(RanklossError, ValueError):
    pass


class ConvergenceError(RanklossError, ArithmeticError):
    """SVD did not converge; ``residual`` holds the last off-orthogonality measure."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class StateError(RanklossError, RuntimeError):
    pass


class TrainingError(RanklossError, RuntimeError):
    pass


class CalibrationUnavailableError(RanklossError, RuntimeError):
    pass
