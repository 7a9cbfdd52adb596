"""Exception taxonomy shared across the package."""


class LetheError(Exception):
    """Base class for every error this package raises deliberately."""


class ShapeError(LetheError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(LetheError, ValueError):
    """Input is outside the numerically meaningful domain (e.g. zero-norm row)."""


class ContractError(LetheError, ValueError):
    """An argument violates a documented precondition."""


class RequestError(LetheError, ValueError):
    """A learn/unlearn request is invalid against the engine's history."""


class ScriptError(LetheError, ValueError):
    """A stream script failed to parse; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigError(LetheError, ValueError):
    """An experiment config file is malformed or references missing files."""


class DivergenceError(LetheError, RuntimeError):
    """Training produced a non-finite loss; carries the request index."""

    def __init__(self, request_index: int, detail: str = ""):
        msg = f"non-finite loss while processing request {request_index}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.request_index = request_index
