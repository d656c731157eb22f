"""Error hierarchy for the convex-integration lab.

Every failure the library can signal derives from ``ConvexLabError`` so that
callers (the CLI in particular) can map whole families to exit codes.
"""

from typing import Dict, Optional


class ConvexLabError(Exception):
    """Base class for all library errors."""


# Spectral layer

class NonMeanZeroNegativePower(ConvexLabError):
    """A negative fractional power was applied to a field with nonzero mean."""


class GridError(ConvexLabError):
    """Base for errors where a frequency support does not fit on the grid."""


class NyquistOverflow(GridError):
    """A projector's support would reach the Nyquist frequency."""


class GridBound(GridError):
    """A level or perturbation does not fit on the requested grid."""


class ScaleTooFine(ConvexLabError):
    """A mollification scale is below the grid resolution."""


class InsufficientHistory(ConvexLabError):
    """A one-sided time operation needs samples before the series start."""


# Geometry

class DegenerateFamily(ConvexLabError):
    """The rank-one tensors of a direction family do not span Sym(2)."""


class OutsideGeometricBall(ConvexLabError):
    """A matrix argument left the ball on which the coefficients are defined."""

    def __init__(
        self,
        message: str,
        time: Optional[float] = None,
        index: Optional[tuple] = None,
        family_index: Optional[int] = None,
    ):
        super().__init__(message)
        self.time = time
        self.index = index
        self.family_index = family_index


class NonRealField(ConvexLabError):
    """Amplitudes of a wave field are not conjugate-paired."""


# Noise

class HorizonTooShort(ConvexLabError):
    """The sampled path ends before the stopping-time cap."""


class OutOfWindow(ConvexLabError):
    """Evaluation was requested past the stopping time."""


class ProfileBoundViolation(ConvexLabError):
    """The sampled growth profile breaks 0 <= M0' <= 8L M0."""


# Parameters

class ParameterRangeError(ConvexLabError):
    """A parameter tuple lies outside its admissible range."""


class SearchExhausted(ConvexLabError):
    """No feasible parameter tuple was found within the search limits."""

    def __init__(self, message: str, binding: str):
        super().__init__(message)
        self.binding = binding


# Iteration

class TimeGridTooCoarse(ConvexLabError):
    """The cutoff scale is not resolved by the time step."""


class CFLViolation(ConvexLabError):
    """A characteristic step exceeds the integrator's stability bound."""


class OffLattice(ConvexLabError):
    """A perturbation frequency is not an integer wavevector."""


class NonRealOutput(ConvexLabError):
    """A perturbation that should be real has a significant imaginary part."""


class ResidualCheckFailed(ConvexLabError):
    """The assembled stress does not reproduce the equation residual."""

    def __init__(self, message: str, component_norms: Optional[Dict[str, float]] = None):
        super().__init__(message)
        self.component_norms = component_norms or {}


class DeepModeTooLarge(ConvexLabError):
    """Deep oscillation verification was requested on too large a grid."""


# Application layer

class ConfigError(ConvexLabError):
    """A run configuration is invalid."""


class MissingArtifact(ConvexLabError):
    """An export needs run artifacts that do not exist."""
