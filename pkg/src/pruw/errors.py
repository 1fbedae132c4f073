"""Exception types raised across the package."""


class PRUWError(Exception):
    """Base class for every error raised by this package."""


class DivisionByZero(PRUWError, ZeroDivisionError):
    pass


class SingularSystem(PRUWError):
    pass


class FieldTooSmall(PRUWError):
    pass


class InvalidConstraints(PRUWError, ValueError):
    pass


class InfeasibleCode(PRUWError):
    pass


class InvalidMixture(PRUWError):
    pass


class InfeasiblePartition(PRUWError):
    pass


class IncompatibleLength(PRUWError):
    pass


class ProtocolViolation(PRUWError):
    pass


class BudgetExceeded(PRUWError):
    pass


class ConfigError(PRUWError):
    """Raised for malformed or schema-invalid scenario configs."""
