"""Error hierarchy.

Every error carries a human-readable ``detail`` and the exit code the CLI maps
it to: 1 usage/config, 2 I/O and file formats, 3 evaluation.
"""
from typing import Optional


class TriggerlessError(Exception):
    exit_code: int = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


# ==================== USAGE / CONFIG ====================

class ContractViolation(TriggerlessError, ValueError):
    """A precondition of an operation does not hold."""
    exit_code = 1


class ConfigError(TriggerlessError):
    exit_code = 1


# ==================== I/O AND FORMATS ====================

class OutputError(TriggerlessError):
    exit_code = 2

    def __init__(self, detail: str, path: str):
        super().__init__(f"{detail}: {path}")
        self.path = path


class DataFormatError(TriggerlessError):
    exit_code = 2


class IdxMagicError(DataFormatError):
    pass


class IdxTruncatedError(DataFormatError):
    pass


class IdxCountMismatchError(DataFormatError):
    pass


class CheckpointFormatError(TriggerlessError):
    exit_code = 2


class BadMagicError(CheckpointFormatError):
    pass


class VersionMismatchError(CheckpointFormatError):
    pass


class TruncatedCheckpointError(CheckpointFormatError):
    pass


class ShapeMismatchError(CheckpointFormatError):
    pass


# ==================== EVALUATION ====================

class EvaluationError(TriggerlessError):
    exit_code = 3


class HorizonExhaustedError(EvaluationError):
    def __init__(self, horizon: int):
        super().__init__(f"No backdoor activation within {horizon} queries")
        self.horizon = horizon


class EmptyTranscriptsError(EvaluationError):
    pass


class InsufficientQueriesError(EvaluationError):
    pass
