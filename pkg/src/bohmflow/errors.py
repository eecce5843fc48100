"""Exception types raised across the package."""


class BohmflowError(Exception):
    """Base class for all package errors."""


class ConfigError(BohmflowError, ValueError):
    pass


class NumericalError(BohmflowError):
    """Base for failures of a numerical procedure."""


class DegenerateDensity(NumericalError):
    pass


class GridTooSmall(BohmflowError, ValueError):
    pass


class StabilityViolation(NumericalError):
    pass


class SolverFailure(NumericalError):
    pass


class UnnormalizableDensity(NumericalError, ValueError):
    pass


class NodalRegionEncounter(NumericalError):
    """A trajectory entered a region where the velocity is undefined."""

    def __init__(self, path_id, t, x):
        self.path_id = int(path_id)
        self.t = float(t)
        self.x = x
        super().__init__(f"path {self.path_id} hit a nodal region at t={self.t:.6g}")


class ProviderRangeExceeded(NumericalError, ValueError):
    pass


class WindowOutOfRange(BohmflowError, ValueError):
    pass


class DegenerateWell(NumericalError, ValueError):
    pass


class TooFewPeaks(NumericalError):
    pass


class FitDiverged(NumericalError):
    pass


class GeometryMismatch(BohmflowError, ValueError):
    pass
