class HyMiRecError(Exception):
    """Base class for errors raised by this package."""


class DegenerateVectorError(HyMiRecError, ValueError):
    """A zero-norm vector reached an operation that needs a direction."""


class ConfigError(HyMiRecError, ValueError):
    pass


class DataError(HyMiRecError, ValueError):
    pass


class NumericError(HyMiRecError, ArithmeticError):
    pass
