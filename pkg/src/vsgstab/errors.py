"""Exception types raised across the package.

Every error derives from VsgStabError so callers can catch the whole
family; pipeline code tags errors with the stage that produced them.
"""

from __future__ import annotations


class VsgStabError(Exception):
    """Base class for all errors raised by this package."""


class GridSchemaError(VsgStabError):
    """A grid file could not be parsed against the documented schema."""


class GridValidationError(VsgStabError):
    """A structurally parsed grid violates a graph invariant."""


class GenerationError(VsgStabError):
    """The synthetic topology generator could not satisfy its inputs."""


class ConfigurationError(VsgStabError):
    """A scenario or sweep configuration is inconsistent."""


class PlacementError(VsgStabError):
    """Not enough candidate nodes to place the requested inverters."""


class AllocationError(VsgStabError):
    """Capacity or inertia allocation is infeasible (e.g. zero capacity)."""


class ReductionError(VsgStabError):
    """Kron reduction failed; carries a conditioning estimate when known."""


class EquilibriumError(VsgStabError):
    """The droop power-flow iteration failed to converge."""


class AssemblyError(VsgStabError):
    """State-space assembly hit inconsistent dimensions."""


class NumericError(VsgStabError):
    """An eigensolver or linear-algebra routine failed."""


class SingularityError(VsgStabError):
    """The stability metric hit its 1 - k_v*B = 0 singularity."""


class StepSizeError(VsgStabError):
    """Integration step too large for the fastest retained mode."""


class EstimationError(VsgStabError):
    """Modal estimation from a trace failed or is ill-conditioned."""


class StageError(VsgStabError):
    """Wraps an error from one stage of a composed pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
