"""Exception hierarchy shared by every module of the package."""


class PdmpError(Exception):
    """Base class for all package errors."""


class ModelError(PdmpError):
    """A model datum violates one of its standing assumptions."""


class IntegrationError(PdmpError):
    """Numerical integration left the state space by more than the projection tolerance."""


class BracketError(PdmpError):
    """The integrated hazard could not be bracketed by the declared intensity bounds."""


class EnvelopeError(PdmpError):
    """A rejection sampler met a density above its declared envelope."""


class CouplingError(PdmpError):
    """The coupled step could not be realised (zero density or trial cap)."""


class SolverError(PdmpError):
    """The LP solver failed (cycling guard, unboundedness, bad certificate)."""


class ConfigError(PdmpError):
    """Invalid experiment configuration."""
