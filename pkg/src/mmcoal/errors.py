"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A model or measure is structurally invalid for the requested operation."""


class SizeError(ValueError):
    """A problem instance exceeds a configured feasibility cap."""


class ProposalError(RuntimeError):
    """A proposal distribution degenerated (all weights zero or unsupported move)."""
