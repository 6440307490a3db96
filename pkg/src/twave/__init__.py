"""Two-speed transmission wave lab.

A strictly convex inclusion with wave speed squared a1 sits inside an outer
domain with speed squared a2 < a1.  The package builds the convexity-adapted
Carleman weights for that configuration, checks their admissibility
numerically, runs a conservative finite-difference solver for the
transmission wave equation, traces refracted rays, and recovers a
zeroth-order potential from Neumann data on the outer boundary.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DomainError,
    InfeasibleWindowError,
    InstabilityError,
    ResolutionError,
    StencilError,
    TangencyError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DomainError",
    "InfeasibleWindowError",
    "InstabilityError",
    "ResolutionError",
    "StencilError",
    "TangencyError",
]
