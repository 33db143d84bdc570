"""Exception hierarchy.  Plain argument problems raise ``ValueError``."""


class OtSteerError(Exception):
    """Base class for library errors."""


class UncontrollableSystemError(OtSteerError):
    """The controllability Gramian is singular over the horizon."""


class AssemblyError(OtSteerError):
    """The LQ cost-to-go matrices could not be assembled."""


class InfeasibleError(OtSteerError):
    """A transport problem or a steering constraint cannot be satisfied."""


class SolverError(OtSteerError):
    """The transport solver failed to reach an optimal vertex."""


class DegenerateDensityError(OtSteerError):
    """A density has no mass to distribute."""


class OutOfDomainError(OtSteerError):
    """A query point lies outside the discretized domain."""


class ConfigError(OtSteerError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ProvenanceError(OtSteerError):
    """An artifact was produced from a different configuration."""
