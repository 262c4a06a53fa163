"""Shared exception types."""


class ContractViolationError(ValueError):
    """An argument breaks a documented precondition (shape, sign, domain)."""


class DivergenceError(RuntimeError):
    """A numerical integration produced non-finite or runaway values."""


class ConfigError(ValueError):
    """An experiment configuration failed validation."""
