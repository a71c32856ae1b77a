"""Exception hierarchy shared across the package."""


class FailcastError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(FailcastError):
    """A malformed input row; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ZeroVarianceError(FailcastError):
    """Series is constant, so autocorrelation structure is undefined."""


class InsufficientDataError(FailcastError):
    """Series too short for the requested number of lags."""


class InfeasibleNuError(FailcastError):
    """nu * n < 1, so the one-class dual has no feasible point."""


class ConvergenceError(FailcastError):
    """Solver hit its iteration cap; carries the final KKT violation."""

    def __init__(self, message: str, kkt_violation: float):
        super().__init__(message)
        self.kkt_violation = kkt_violation


class DegenerateTrainingError(FailcastError):
    """Stage-1 filtering left no failure instances to train stage 2 on."""


class StratificationError(FailcastError):
    """Requested fold count cannot give every fold a failure instance."""


class GenerationError(FailcastError):
    """Synthetic trace configuration is infeasible."""
