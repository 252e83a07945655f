"""Exception hierarchy. The CLI maps each family onto an exit code."""


class DiarkitError(Exception):
    exit_code = 1


class ValidationError(DiarkitError, ValueError):
    """Bad parameters, config values or annotation contents."""

    exit_code = 2


class ParameterError(ValidationError):
    pass


class ContractError(ValidationError):
    """Shape or precondition violation on an API call."""


class FormatError(DiarkitError, ValueError):
    """Malformed file (bad header, truncated payload, wrong magic)."""

    exit_code = 2


class UnsupportedFormatError(FormatError):
    pass


class ParseError(FormatError):
    def __init__(self, message, path=None, line_number=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line_number is not None:
            where += f"{line_number}:"
        super().__init__(f"{where} {message}" if where else message)
        self.path = path
        self.line_number = line_number


class DataError(DiarkitError):
    """The data cannot support the requested operation (e.g. a speaker without usable audio)."""

    exit_code = 2


class MissingArtifactError(DiarkitError):
    exit_code = 3

    def __init__(self, path, stage):
        super().__init__(f"missing artifact {path}; run the '{stage}' stage first")
        self.path = path
        self.stage = stage


class StaleArtifactError(DiarkitError):
    exit_code = 3


class NumericalError(DiarkitError, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericalError):
    """Non-finite loss or gradient during training."""


class UndefinedDERError(NumericalError):
    """No scored reference speech left after collars."""
