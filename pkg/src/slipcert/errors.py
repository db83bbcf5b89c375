"""Exception hierarchy shared by all modules."""


class SlipCertError(Exception):
    """Base class for every error raised by :mod:`slipcert`."""


class DomainError(SlipCertError, ValueError):
    """A parameter lies outside the admissible range."""


class ModelViolation(SlipCertError, ValueError):
    """The system does not satisfy a structural assumption (roots, signs, stability)."""


class ContractViolation(SlipCertError, ValueError):
    """An input breaks a function precondition (e.g. a non-symmetric matrix)."""


class QuadratureError(SlipCertError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class IndeterminateTail(SlipCertError, ArithmeticError):
    """The high-frequency behaviour of the frequency inequality cannot be decided."""


class UnsupportedKernel(SlipCertError, ValueError):
    """The Volterra kernel is not a finite sum of delayed exponentials."""


class StiffnessRefusal(DomainError):
    """The time step does not resolve the fast mode of the perturbed system."""


class Divergence(SlipCertError, ArithmeticError):
    """Numerical integration blew up.

    Attributes
    ----------
    last_time : float
        Time of the last finite sample.
    trajectory : Trajectory or None
        Samples up to ``last_time``.
    """

    def __init__(self, message, last_time, trajectory=None):
        super().__init__(message)
        self.last_time = last_time
        self.trajectory = trajectory


class NoCertificate(SlipCertError):
    """No slip bound could be certified within the search budget."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best or {}
