"""Exception hierarchy shared by every module in the package."""


class TkwinError(Exception):
    """Base class for all library errors."""


class DimensionError(TkwinError, ValueError):
    """Operand extents are incompatible."""


class PartitionError(DimensionError):
    """A spatial extent is not divisible by the requested window or stride."""


class ParameterError(TkwinError, ValueError):
    """A scalar argument is outside its admissible range."""


class ContractError(TkwinError):
    """A caller-side precondition was violated."""


class DegenerateInputError(TkwinError, ValueError):
    """The input carries no information to work with (e.g. an empty ground truth)."""


class InsufficientDataError(TkwinError, ValueError):
    """Too few samples for the requested estimate."""


class NumericalError(TkwinError, ArithmeticError):
    """A NaN or Inf appeared where a finite value was required."""


class ConfigError(TkwinError, ValueError):
    """A configuration file or flag is malformed."""
