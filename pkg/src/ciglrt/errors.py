"""Exception and warning types shared across the package."""


class CiglrtError(Exception):
    """Base class for all package errors."""


class InvalidInput(CiglrtError, ValueError):
    """Malformed or out-of-range user input."""


class InvalidTopology(InvalidInput):
    pass


class GraphNotConnected(CiglrtError):
    pass


class ResourceLimit(CiglrtError):
    """A retry budget or size cap was exceeded."""


class ModelDegenerate(CiglrtError):
    pass


class AssumptionViolated(CiglrtError):
    pass


class ContractViolation(CiglrtError):
    """A step function was called outside its schedule."""


class InsufficientData(CiglrtError):
    pass


class NumericalDivergence(CiglrtError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t})")
        self.t = t


class AssumptionWarning(UserWarning):
    """A probe could not confirm a modelling assumption."""
