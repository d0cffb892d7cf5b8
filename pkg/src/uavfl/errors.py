class SolverError(RuntimeError):
    """Base class for solver failures."""


class InfeasibleError(SolverError):
    def __init__(self, message: str, report=None, violations=None):
        super().__init__(message)
        self.report = report
        self.violations = violations


class NonConvergenceError(SolverError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class MonotonicityViolation(SolverError):
    pass
