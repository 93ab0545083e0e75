"""Exception types shared across the package.

Three failure families map onto the CLI exit codes: usage problems (1),
file/parse problems (2), and contract/readiness problems (3).
"""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its precondition."""


class DegenerateInput(ContractViolation):
    """Numerically degenerate input, e.g. a zero-norm vector."""


class NotReady(RuntimeError):
    """State queried before the required initialization happened."""


class ParseError(ValueError):
    """A file or config value could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(ParseError):
    """A file declares a format version this code does not speak."""

    def __init__(self, message: str):
        super().__init__(message)


class UsageError(ValueError):
    """Bad command-line invocation."""
