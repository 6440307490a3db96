"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
infeasible parameter windows exit 2, numerical failures exit 3.
"""


class TwaveError(Exception):
    """Base class for package errors."""


class ConfigError(TwaveError):
    """Bad or unknown configuration input."""


class DomainError(TwaveError):
    """Geometric precondition violated (point outside domain, non-nested
    curves, non-convex inclusion where convexity is required)."""


class ResolutionError(TwaveError):
    """Grid or quadrature too coarse for the requested operation."""


class StencilError(ResolutionError):
    """A finite-difference or interpolation stencil lacks interior support."""


class TangencyError(TwaveError):
    """Ray-curve intersection failed to bracket after perturbation."""


class InstabilityError(TwaveError):
    """Time stepping produced NaN/Inf."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite field at step {step}")


class InfeasibleWindowError(TwaveError):
    """No admissible Carleman parameter window for the given geometry."""
