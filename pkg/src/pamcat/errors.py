"""Exception types shared across modules; the CLI maps them to exit codes."""


class ValidationError(ValueError):
    """Invalid input or configuration (exit code 2)."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed to converge (exit code 3)."""
