"""Exception types shared across the package."""


class AcBlstmError(Exception):
    """Base class for all package errors."""


class ShapeError(AcBlstmError, ValueError):
    pass


class BoundsError(AcBlstmError, IndexError):
    pass


class LabelError(AcBlstmError, ValueError):
    pass


class NumericError(AcBlstmError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ContractError(AcBlstmError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class ConfigError(AcBlstmError, ValueError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.reason = message
        where = ""
        if key is not None:
            where += f"[{key}]"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where} {message}".strip())


class FormatError(AcBlstmError, ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetError(AcBlstmError, ValueError):
    pass
