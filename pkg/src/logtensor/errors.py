"""Exception hierarchy shared by every layer of the package."""


class LogTensorError(Exception):
    """Base class for all errors raised by logtensor."""


class IncompatiblePolicies(LogTensorError):
    pass


class MixedScalarLayers(LogTensorError):
    pass


class PolicyOverflow(LogTensorError):
    pass


class LogDegreeOverflow(LogTensorError):
    pass


class LogDegreePresent(LogTensorError):
    pass


class WindowEmpty(LogTensorError):
    pass


class WindowTooSmall(LogTensorError):
    """A coefficient needed for a comparison lies outside the truncation window."""


class ArgOrder(LogTensorError):
    pass


class ScaleExceeded(LogTensorError):
    pass


class NotNilpotent(LogTensorError):
    pass


class CommutationFailure(LogTensorError):
    def __init__(self, mode, message=None):
        self.mode = mode
        super().__init__(message or f"L(0) nilpotent part does not commute with mode {mode!r}")


class NotHomogeneous(LogTensorError):
    pass


class SingularRecovery(LogTensorError):
    pass


class ZeroArgument(LogTensorError):
    pass


class RegionViolation(LogTensorError):
    pass


class SlotMismatch(LogTensorError):
    pass


class ClosureOverflow(LogTensorError):
    pass


class ModuleDataError(LogTensorError):
    """Invalid module or intertwiner data, with the location of the problem."""

    def __init__(self, location, message):
        self.location = location
        super().__init__(f"{location}: {message}")


class ParseError(LogTensorError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class ValidationError(LogTensorError):
    pass


class NoRun(LogTensorError):
    pass
