"""Exception hierarchy shared by every subpackage."""


class EVPError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(EVPError, ValueError):
    pass


class NumericalError(EVPError, ArithmeticError):
    """A forward operation produced a non-finite value, or a loss went NaN."""


class GraphError(EVPError, RuntimeError):
    """Misuse of the differentiation graph (replayed backward, non-scalar loss)."""


class FormatError(EVPError, ValueError):
    """Malformed EVPT file."""


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class IngestionError(EVPError, ValueError):
    pass


class ConfigError(EVPError, ValueError):
    pass
