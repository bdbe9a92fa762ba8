"""Shared exception types; the CLI maps them onto exit codes."""


class ValidationError(ValueError):
    """Bad inputs, shapes, or configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite state during training or sampling (CLI exit code 3)."""
