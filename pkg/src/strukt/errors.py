"""Exception hierarchy shared by every strukt module."""


class StruktError(Exception):
    """Base class for all strukt errors."""


class FormatError(StruktError, ValueError):
    """A file does not follow the expected binary or text layout."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses an encoding strukt does not read."""


class InputTooShortError(StruktError, ValueError):
    """The input signal is shorter than one analysis frame."""


class ConfigurationError(StruktError, ValueError):
    """Inconsistent or invalid configuration."""


class ParseError(FormatError):
    """Annotation text could not be parsed.

    Carries the 1-based line number of the offending line when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMeanError(StruktError, ValueError):
    """A masked mean was requested over zero valid elements."""


class ContractError(StruktError, ValueError):
    """A caller violated a function precondition."""


class NonFiniteLossError(StruktError, FloatingPointError):
    """A loss component evaluated to NaN or infinity."""
