"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input outside the domain an operation accepts."""


class SingularMatrixError(ArithmeticError):
    pass


class CapacityError(ValueError):
    """Exact brute-force metric requested on a graph that is too large."""


class ConfigurationError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


class NotReadyError(Exception):
    """Raised by ``decode`` while the received span is still deficient."""

    def __init__(self, rank: int, k: int):
        super().__init__(f"decode buffer has rank {rank} < {k}")
        self.rank = rank
        self.k = k


class ConfigParseError(ValidationError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
