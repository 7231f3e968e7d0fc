"""Exception types shared across the toolkit."""


class VirialabError(Exception):
    """Base class for all toolkit errors."""


class DomainError(VirialabError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ConfigurationError(VirialabError, ValueError):
    """A configuration value violates a documented invariant."""


class DivergentIntegralError(VirialabError, ValueError):
    """A requested integral does not converge."""


class NotApplicableError(VirialabError, ValueError):
    """The operation is undefined for this potential family."""


class BlowUpError(VirialabError, RuntimeError):
    """Integration produced non-finite positions (time step too large)."""

    def __init__(self, step_index, message=None):
        self.step_index = step_index
        super().__init__(message or f"non-finite positions at step {step_index}")


class InstabilityError(VirialabError, RuntimeError):
    """PDE stepping produced an invalid (negative) density."""

    def __init__(self, step_index, message=None):
        self.step_index = step_index
        super().__init__(message or f"negative density at step {step_index}")


class InsufficientDataError(VirialabError, ValueError):
    """Not enough usable data points for a fit."""
