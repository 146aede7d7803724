class SmileGridError(Exception):
    """Base class for all library errors."""


class ModelEvaluationError(SmileGridError, ArithmeticError):
    """The Hagan approximation produced a non-finite value."""


class CalibrationDomainError(SmileGridError):
    """The ATM root for s0 is not bracketed (or did not converge)."""


class MatrixConstructionError(SmileGridError):
    def __init__(self, i, j, reason):
        self.i = i
        self.j = j
        self.reason = reason
        super().__init__(f"error-matrix cell ({i}, {j}) failed: {reason}")


class BracketingError(SmileGridError):
    """The initial grid does not bracket the solution."""


class TableGrowthError(SmileGridError):
    """A lookup table exceeded its maximum size."""


class OutOfRangeError(SmileGridError, ValueError):
    def __init__(self, p, lo, hi, index=None):
        self.p = p
        self.index = index
        where = "" if index is None else f" (sample {index})"
        super().__init__(f"probability {p!r} outside table range [{lo!r}, {hi!r}]{where}")


class SweepRowError(SmileGridError):
    """One row of an error sweep failed; ``param``/``value`` name the row."""

    def __init__(self, param, value, cause):
        self.param = param
        self.value = value
        self.cause = cause
        super().__init__(f"{param} sweep row {value!r} failed: {type(cause).__name__}: {cause}")
