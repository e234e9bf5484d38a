class BoostkitError(Exception):
    """Base class for all errors raised by boostkit."""

    exit_code: int = 1


class DataError(BoostkitError, ValueError):
    """Input data is missing, malformed or incompatible with the request."""

    exit_code = 3


class NumericError(BoostkitError, ArithmeticError):
    """A numerical procedure failed or was asked for an infeasible target."""

    exit_code = 4


class ModelError(BoostkitError, ValueError):
    """A fitted model was used in a way it does not support."""

    exit_code = 3
