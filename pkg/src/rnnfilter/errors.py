"""Exception types raised across the package."""


class RnnFilterError(Exception):
    pass


class DimensionError(RnnFilterError, ValueError):
    pass


class InvalidModelError(RnnFilterError, ValueError):
    pass


class SingularityError(RnnFilterError, ArithmeticError):
    pass


class NonConvergenceError(RnnFilterError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class DegeneracyError(RnnFilterError, ArithmeticError):
    """All particle weights vanished at some time step."""

    def __init__(self, message, t=None, trajectory=None):
        super().__init__(message)
        self.t = t
        self.trajectory = trajectory


class NumericError(RnnFilterError, ArithmeticError):
    pass


class TrainingDivergedError(RnnFilterError, RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ContractViolationError(RnnFilterError, ValueError):
    pass


class ConfigError(RnnFilterError, ValueError):
    pass
