class DataError(ValueError):
    """Malformed or unusable input data."""


class NumericalError(ArithmeticError):
    """A factorization or update produced non-finite or singular quantities."""
