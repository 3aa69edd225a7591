"""Error categories for posterior-control."""
from typing import Optional


class PosteriorControlError(Exception):
    """Base error. `category` and `exit_code` drive the CLI exit status."""
    category = "error"
    exit_code = 1


class ContractError(PosteriorControlError, ValueError):
    """Precondition of a library operation violated."""
    category = "contract"
    exit_code = 2


class SemiringMismatchError(ContractError):
    """Elements from different semirings were combined."""


class InvalidSegmentationError(ContractError):
    """Spans do not tile [0, T) or exceed the max segment length."""


class EnumerationLimitError(ContractError):
    """Brute-force enumeration requested beyond its length guard."""


class ConfigError(PosteriorControlError, ValueError):
    category = "config"
    exit_code = 3


class CorpusFormatError(PosteriorControlError):
    """Malformed corpus/plan/decode line."""
    category = "corpus"
    exit_code = 4

    def __init__(self, message: str, path: Optional[str] = None, line_number: Optional[int] = None):
        self.path = path
        self.line_number = line_number
        where = ""
        if path is not None:
            where = f"{path}"
            if line_number is not None:
                where += f":{line_number}"
            where += ": "
        super().__init__(f"{where}{message}")


class CheckpointError(PosteriorControlError):
    category = "checkpoint"
    exit_code = 5


class VocabularyMismatchError(PosteriorControlError):
    category = "vocabulary"
    exit_code = 6


class NonFiniteLossError(PosteriorControlError):
    """A training objective term became NaN/inf; `term` names it."""
    category = "training"
    exit_code = 7

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"non-finite objective term '{term}' ({value})")


class DivergenceError(PosteriorControlError):
    category = "training"
    exit_code = 7

    def __init__(self, message: str, dump_path: Optional[str] = None):
        self.dump_path = dump_path
        if dump_path:
            message = f"{message} (diagnostics: {dump_path})"
        super().__init__(message)
