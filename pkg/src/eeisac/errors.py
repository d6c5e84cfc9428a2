"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not match the scenario configuration."""


class ArchitectureError(ValueError):
    """Operation called on a precoder of the wrong architecture."""


class InfeasibleError(RuntimeError):
    """No point satisfies the sensing and power constraints."""


class SolverError(RuntimeError):
    """A numerical routine failed to converge or hit a singular system."""
