"""Exception hierarchy shared by every module of the package."""


class FreqCtlError(Exception):
    """Base class for all package errors."""


class DimensionError(FreqCtlError, ValueError):
    """Array shapes do not agree with the network or model dimensions."""


class KronReductionError(FreqCtlError):
    """The eliminated block of the admittance matrix is singular."""

    def __init__(self, message, buses=()):
        super().__init__(message)
        self.buses = tuple(buses)


class SimulationDiverged(FreqCtlError):
    """The plant state became non-finite."""

    def __init__(self, message, t=None, step=None):
        super().__init__(message)
        self.t = t
        self.step = step


class InfeasibleSetpoint(FreqCtlError):
    """Newton tracking of an IBR power command did not converge."""


class ModelDegeneracyError(FreqCtlError):
    """A condensed Hessian or model matrix is not usable (e.g. not PD)."""


class DetectabilityError(FreqCtlError):
    """The augmented observer pair has unobservable marginal or unstable modes."""

    def __init__(self, message, directions=None):
        super().__init__(message)
        self.directions = directions


class RiccatiError(FreqCtlError):
    """The observer Riccati equation could not be solved."""


class TuningError(FreqCtlError):
    """Every grid point of a VSM gain search failed."""


class CaseFormatError(FreqCtlError):
    """A case or scenario file could not be parsed or validated."""

    def __init__(self, message, line=None, path=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.path = path
