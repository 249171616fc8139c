"""
Error hierarchy shared by every module.

Each class carries the process exit code the command-line surface maps it to.
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONTRACT = 2
EXIT_IO = 3


class PahsError(Exception):
    """Base class for all package errors"""

    exit_code = EXIT_CONTRACT


class ShapeError(PahsError, ValueError):
    """A tensor has the wrong rank or size along a named axis"""

    def __init__(self, tensor: str, axis: str, expected, actual):
        self.tensor = tensor
        self.axis = axis
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{tensor}: {axis} mismatch (expected {expected}, got {actual})"
        )


class ContractError(PahsError):
    """A documented precondition was violated"""


class ConfigError(PahsError, ValueError):
    """Invalid model or run configuration"""


class FrameIOError(PahsError, OSError):
    """Reading or writing an artifact failed"""

    exit_code = EXIT_IO

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")
