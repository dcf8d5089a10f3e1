"""Exception types raised by the solvers."""


class RiskEigError(Exception):
    """Base class for all errors raised by this package."""


class MalformedModel(RiskEigError):
    pass


class DimensionMismatch(RiskEigError):
    pass


class InvalidPolicy(RiskEigError):
    pass


class InvalidParams(RiskEigError):
    pass


class ShiftInsufficient(RiskEigError):
    pass


class NoConvergence(RiskEigError):
    """A solver ran out of iterations.

    ``report`` carries whatever partial result the solver had assembled,
    so callers can still inspect or serialize it.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DegenerateEigenvector(RiskEigError):
    pass


class ReferenceUnreachable(RiskEigError):
    pass


class ZeroPsi(RiskEigError):
    pass


class ZeroMatrix(RiskEigError):
    pass


class TooManyPolicies(RiskEigError):
    def __init__(self, count, cap):
        super().__init__(f"{count} deterministic policies exceed the cap of {cap}")
        self.count = count
        self.cap = cap


class LeakyKernel(RiskEigError):
    pass
