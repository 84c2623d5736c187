"""Exception hierarchy shared by all cawave modules."""


class CawaveError(Exception):
    """Base class for every error raised by the package."""


class DomainError(CawaveError, ValueError):
    """An argument lies outside the domain where the model is defined."""


class AssumptionViolation(CawaveError):
    """The kinetics do not have the nullcline/excitability structure assumed."""


class PreconditionError(CawaveError, ValueError):
    """An operation was called outside its admissible parameter window."""


class CountMismatch(CawaveError):
    """A root count differs from the expected one."""


class NoConvergence(CawaveError):
    """An iterative solver failed to reach its tolerance."""


class WrongKind(CawaveError):
    """A converged wave does not have the shape of the requested kind."""


class ExistenceViolation(CawaveError):
    """Requested wave cannot exist at these parameters."""


class StallError(CawaveError):
    """Continuation step size underflowed."""


class IntegrationError(CawaveError):
    """Time integrator could not meet its tolerance."""


class BlowUp(CawaveError):
    """A simulated field left the physically meaningful range."""


class InsufficientData(CawaveError):
    """Not enough samples to produce a reliable estimate."""


class MeasurementError(CawaveError):
    """A wave-speed measurement could not be made or fit poorly."""


class EmptyDataset(CawaveError, ValueError):
    """A figure or table was asked to render with nothing in it."""


class ConfigError(CawaveError, ValueError):
    """A run configuration does not match its schema."""
