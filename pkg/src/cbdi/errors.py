"""Exception hierarchy shared by every module of the package."""


class CBDIError(Exception):
    """Base class for all package errors."""


class ConfigError(CBDIError, ValueError):
    """Invalid parameters, unknown keys or missing sections."""


class NumericalError(CBDIError):
    """A quadrature or root-finding routine could not certify its answer.

    ``residual`` carries the last error estimate when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CertificationError(NumericalError):
    """A Lyapunov or finiteness certificate could not be established."""


class ConsistencyError(CBDIError):
    """Two independent computations that must agree did not."""


class SimulationError(CBDIError):
    """The path simulator could not proceed (e.g. jump-rate overflow)."""


class EmptyMeasureError(CBDIError):
    """Sampling was requested above a level carrying no mass."""


class UndecidableError(CertificationError):
    """Finiteness of an improper integral cannot be decided from the inputs."""
