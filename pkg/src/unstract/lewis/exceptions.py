"""Exceptions raised across the LEWIS toolkit.

Every error carries a ``value`` dictionary with at least a ``message`` and
an ``error`` kind, so callers (and the CLI) can report it as structured data.

Classes:
    LewisException: Base class for every toolkit error.
"""

from typing import Any, Optional


class LewisException(Exception):
    """Base exception for the LEWIS toolkit.

    Attributes:
        value (dict): Structured description of the error. Always contains
            ``message`` and ``error`` keys.
        exit_code (int): Process exit code used by the command line.

    Args:
        message (str): Explanation of the error.
        **context: Extra fields stored alongside the message.
    """

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        self.value = {"message": message, "error": type(self).__name__, **context}
        super().__init__(message)

    def __str__(self):
        return repr(self.value)

    def error_message(self):
        return self.value


class EmptyInput(LewisException):
    pass


class EmptyCorpus(LewisException):
    pass


class InvalidScript(LewisException):
    pass


class TagMismatch(LewisException):
    pass


class FillMismatch(LewisException):
    pass


class LengthError(LewisException):
    pass


class DivergenceError(LewisException):
    """Raised when the training loss becomes NaN or infinite.

    Args:
        message (str): Explanation of the error.
        step (int): Optimizer step at which the loss diverged.
    """

    def __init__(self, message: str, step: int, **context: Any):
        super().__init__(message, step=step, **context)
        self.step = step


class VocabMismatch(LewisException):
    pass


class FormatError(LewisException):
    pass


class DegenerateData(LewisException):
    pass


class ConstraintFailure(LewisException):
    pass


class ShapeError(LewisException):
    pass


class ConfigError(LewisException):
    """Raised for run-configuration schema violations.

    Args:
        message (str): Explanation of the error.
        key_path (str, optional): Dotted path of the offending key.
    """

    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None, **context: Any):
        super().__init__(message, key_path=key_path, **context)
        self.key_path = key_path


class StageDependencyError(LewisException):
    """Raised when a pipeline stage runs before its upstream artifact exists.

    Args:
        message (str): Explanation of the error.
        missing (str): Path of the missing artifact.
    """

    exit_code = 3

    def __init__(self, message: str, missing: str, **context: Any):
        super().__init__(message, missing=missing, **context)
        self.missing = missing


class StageLockError(LewisException):
    pass
