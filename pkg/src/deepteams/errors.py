"""Exception types raised across the package."""


class DeepTeamsError(Exception):
    """Base class for package-specific failures."""


class ConfigError(DeepTeamsError):
    """Malformed model file, experiment configuration, or CLI parameter set."""


class ModelDimensionError(DeepTeamsError):
    """A model matrix has a shape inconsistent with the declared layout."""


class NotWeaklyCoupled(DeepTeamsError):
    """Decomposed solve requested for a model whose coupling is not feature-local."""


class FeasibilityLost(DeepTeamsError):
    """The risk deflation I - 2*lam*W*P stopped being positive definite.

    Raised when the risk factor is too large for the given noise level and
    population size; shrink the risk factor or grow the population.
    """


class NoConvergence(DeepTeamsError):
    """An iterative solver hit its iteration cap before reaching tolerance."""


class UnstablePolicy(DeepTeamsError):
    """A closed-loop spectral radius is >= 1; infinite-horizon costs diverge."""


class SingularCovariance(DeepTeamsError):
    """A state-correlation block is numerically singular."""


class NumericOverflow(DeepTeamsError):
    """A simulated state norm grew past the overflow guard."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class MGFOverflow(DeepTeamsError):
    """exp(lam * cumulative cost) left the representable range.

    Signals that lam * T is too large for Monte-Carlo estimation of the
    risk-sensitive objective.
    """


class TooManyUnstableSamples(DeepTeamsError):
    """More than the tolerated share of perturbed rollouts overflowed."""
