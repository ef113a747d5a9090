"""Exception types raised across the package."""


class NoisePrintsError(Exception):
    """Base class for all package errors."""


class FormatError(NoisePrintsError, ValueError):
    """A tensor, seed, claim or bundle file is malformed."""


class ShapeMismatchError(NoisePrintsError, ValueError):
    pass


class InvalidTransformError(NoisePrintsError, ValueError):
    pass


class DegenerateInputError(NoisePrintsError, ValueError):
    """A tensor with zero norm was scored."""


class InsufficientOverlapError(NoisePrintsError, ValueError):
    pass


class NumericalError(NoisePrintsError, ArithmeticError):
    pass


class EstimationFailedError(NoisePrintsError):
    pass


class ProtocolError(NoisePrintsError):
    """A claim could not be read or resolved; no verdict is produced."""


class AttackDivergedError(NoisePrintsError):
    pass
