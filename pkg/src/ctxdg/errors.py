"""Exception hierarchy shared by every module.

Each class maps to one CLI exit code (see :mod:`ctxdg.cli`).
"""


class CtxdgError(Exception):
    exit_code = 2


class RejectedInputError(CtxdgError, ValueError):
    """An argument violates an operation's precondition."""

    exit_code = 1


class ConfigurationError(CtxdgError):
    exit_code = 1


class IngestionError(CtxdgError):
    """A dataset file could not be parsed."""

    exit_code = 1


class CapacityError(CtxdgError):
    """An exact enumeration would exceed the configured state budget."""

    def __init__(self, message, cardinality=None):
        super().__init__(message)
        self.cardinality = cardinality


class TrainingDivergedError(CtxdgError):
    def __init__(self, iteration, seed=None):
        msg = f"training diverged (non-finite loss) at iteration {iteration}"
        if seed is not None:
            msg += f" (seed {seed})"
        super().__init__(msg)
        self.iteration = iteration
        self.seed = seed


class UndefinedRatioError(CtxdgError, ZeroDivisionError):
    pass


class VerificationFailedError(CtxdgError):
    exit_code = 3

    def __init__(self, message, values=None):
        super().__init__(message)
        self.values = dict(values or {})
