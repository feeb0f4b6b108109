"""
Error types shared by the tagger modules.

Every error carries the process exit code the management commands report,
so a command only has to translate ``TaggerError`` into ``CommandError``.
"""


class TaggerError(Exception):
    exit_code = 1


class ConfigError(TaggerError):
    """Invalid configuration key, value or combination."""

    exit_code = 1


class DataError(TaggerError, ValueError):
    """Malformed or inconsistent input data (corpus, embeddings, checkpoint)."""

    exit_code = 2

    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = path
        self.line = line


class NumericError(TaggerError, ArithmeticError):
    """Non-finite values, failed gradient checks, diverged training."""

    exit_code = 3


class ShapeError(TaggerError, ValueError):
    exit_code = 3
