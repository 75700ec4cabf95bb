"""Exception hierarchy shared by every dynaflow module."""


class DynaflowError(Exception):
    """Base class. ``kind`` is the short tag the CLI reports and maps to an exit status."""

    kind = "error"
    exit_code = 1


class FormatError(DynaflowError, ValueError):
    kind = "format"
    exit_code = 2


class LengthError(DynaflowError, ValueError):
    kind = "length"
    exit_code = 2


class DimensionError(DynaflowError, ValueError):
    kind = "dimension"
    exit_code = 4


class EmptyInputError(DynaflowError, ValueError):
    kind = "empty-input"
    exit_code = 3


class ConfigurationError(DynaflowError, ValueError):
    kind = "config"
    exit_code = 5


class ContractViolationError(DynaflowError, ValueError):
    kind = "contract"
    exit_code = 6


class WindowError(DynaflowError, RuntimeError):
    """A single window of a clip failed; ``index`` is the window position."""

    kind = "window"
    exit_code = 7

    def __init__(self, index, cause):
        super().__init__(f"window {index} failed: {cause}")
        self.index = index
        self.cause = cause
