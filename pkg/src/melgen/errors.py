"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A parameter set is internally inconsistent or out of range."""


class ParseError(ValueError):
    """A manifest or config file is malformed.

    Carries the offending line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorpusError(RuntimeError):
    """Audio corpus cannot be scanned or loaded."""


class EmptyCorpusError(CorpusError):
    """No decodable audio was found."""


class NumericFault(FloatingPointError):
    """A non-finite value (NaN/Inf) appeared in a computation."""
