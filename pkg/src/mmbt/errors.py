"""Exception types shared across the package."""


class MMBTError(Exception):
    pass


class ShapeMismatch(MMBTError, ValueError):
    pass


class IndexOutOfRange(MMBTError, IndexError):
    pass


class NotScalar(MMBTError, ValueError):
    pass


class NumericalError(MMBTError, FloatingPointError):
    """A forward op produced NaN or Inf from finite inputs."""


class ConfigMismatch(MMBTError, ValueError):
    pass


class EmptyInput(MMBTError, ValueError):
    pass


class TooLong(MMBTError, ValueError):
    pass


class MissingModality(MMBTError, ValueError):
    pass


class InvalidSpec(MMBTError, ValueError):
    pass


class EmptySplit(MMBTError, ValueError):
    pass


class UnknownLabel(MMBTError, KeyError):
    pass


class ParseError(MMBTError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MissingField(ParseError):
    pass


class IdMismatch(MMBTError, ValueError):
    pass
