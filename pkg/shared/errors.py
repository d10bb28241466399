from typing import Any, Optional


class RicciLabError(Exception):
    """Base class for every error raised by the lab"""


class InvalidDimensionError(RicciLabError):
    pass


class UnsupportedFactorError(RicciLabError):
    pass


class DimensionTooSmallError(RicciLabError):
    pass


class BracketFailureError(RicciLabError):
    pass


class SingularTimeError(RicciLabError):
    """Requested time is at or past the blow-up time of a closed-form flow"""

    def __init__(self, message: str, blowup_time: float):
        super().__init__(message)
        self.blowup_time = blowup_time


class SingularityReachedError(RicciLabError):
    """A flow step would leave the space of positive metric coefficients"""

    def __init__(self, message: str, last_state: Any, last_time: Optional[float] = None):
        super().__init__(message)
        self.last_state = last_state
        self.last_time = last_time


class StepRejectedError(RicciLabError):
    """Explicit step exceeds its stability bound"""

    def __init__(self, message: str, suggested_dt: float):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class MaskedDomainError(RicciLabError):
    pass


class UnreachableError(RicciLabError):
    pass


class ConfigurationError(RicciLabError):
    """Invalid configuration; `line` points into the source config when known"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        base = super().__str__()
        if self.line is not None:
            return f"line {self.line}: {base}"
        return base


class HypothesisViolationError(RicciLabError):
    pass


class InfeasibleConstantsError(RicciLabError):
    """Schedule constants break one of the admissibility inequalities"""

    def __init__(self, message: str, inequality: str):
        super().__init__(message)
        self.inequality = inequality


class NonConvergentLimitError(RicciLabError):
    pass


class OutOfDomainError(RicciLabError):
    pass


class AuditFailureError(RicciLabError):
    """An a-priori assumption audit failed at a given stage and cell"""

    def __init__(self, message: str, audit: str, stage: int, cell: Optional[tuple] = None):
        super().__init__(message)
        self.audit = audit
        self.stage = stage
        self.cell = cell
