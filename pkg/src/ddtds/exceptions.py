"""Exception hierarchy shared by the library and the command line tool."""


class DdtdsError(Exception):
    """Base class for all errors raised by ddtds."""


class InvalidInputError(DdtdsError, ValueError):
    """Non-finite or malformed numerical input."""


class ContractViolation(DdtdsError, ValueError):
    """A caller broke an operation precondition (e.g. a delay above the bound)."""


class DivergenceError(DdtdsError, RuntimeError):
    """A simulated trajectory exceeded the configured norm ceiling."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class OutOfWindowError(ContractViolation):
    """A data shift reaches outside the recorded window."""


class NotIdentifiableError(DdtdsError):
    """The stacked data matrix lacks full row rank, so the data cannot
    pin down the system matrices (and no data-based representation exists)."""

    def __init__(self, message, rank=None, required=None, pair=None):
        super().__init__(message)
        self.rank = rank
        self.required = required
        self.pair = pair


class StructuralError(DdtdsError, ValueError):
    """Block dimensions of a matrix expression do not line up."""


class DegenerateSolutionError(DdtdsError):
    """The solver returned a point where X0 @ Q3 is numerically singular."""


class CertificateInconsistencyError(DdtdsError):
    """Two data expressions for the same slack matrix disagree."""


class NoConvergenceError(DdtdsError):
    """An empirical sum failed to settle within the simulated horizon."""


class ConfigError(DdtdsError, ValueError):
    """Experiment configuration failed validation."""


class InfeasibleError(DdtdsError):
    """A synthesis program returned no certified point; ``result`` keeps the diagnostics."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
