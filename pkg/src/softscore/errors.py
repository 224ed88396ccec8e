"""Exception types shared across the package."""


class SoftScoreError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SoftScoreError):
    """Invalid user input: malformed files, bad configuration, unusable cohorts."""


class ContractViolation(SoftScoreError):
    """API misuse by a caller: wrong dimensions, parameters outside the feasible set."""


class NumericError(SoftScoreError):
    """Numerical failure: non-finite objectives, solvers that do not converge."""
