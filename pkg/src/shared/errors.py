"""Error hierarchy shared by services and the command-line application.

Every error carries the process exit code the CLI maps it to.
"""
from typing import Optional, Sequence

import numpy as np


class GazeNetError(Exception):
    """Base class for all gazenet failures."""
    exit_code = 1


class ConfigurationError(GazeNetError):
    """Invalid configuration file, flag or environment value."""
    exit_code = 1


class GazeDataError(GazeNetError):
    """Input data does not satisfy the ingest schema or a domain invariant."""
    exit_code = 2


class SchemaError(GazeDataError):
    def __init__(self, path: str, column: str):
        super().__init__(f"{path}: missing required column '{column}'")
        self.path = path
        self.column = column


class RowError(GazeDataError):
    """A cell could not be parsed into the expected type."""

    def __init__(self, path: str, line: int, column: str, value: object, reason: str = ""):
        detail = f" ({reason})" if reason else ""
        super().__init__(f"{path}:{line}: cannot parse column '{column}' value {value!r}{detail}")
        self.path = path
        self.line = line
        self.column = column
        self.value = value


class DataValidationError(GazeDataError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message)
        self.line = line


class EmptyTrialError(GazeDataError):
    def __init__(self, message: str = "empty trial"):
        super().__init__(message)


class InsufficientDataError(GazeDataError):
    """Not enough observations, trials or participants for the requested analysis."""


class RankDeficiencyError(GazeDataError):
    def __init__(self, columns: Sequence[str]):
        names = ", ".join(columns)
        super().__init__(
            f"Design matrix is rank deficient; collinear columns: {names}. "
            f"Add them to the predictor drop-list (--drop-predictor)."
        )
        self.columns = list(columns)


class NumericalError(GazeNetError):
    exit_code = 3


class ConvergenceError(NumericalError):
    """Iterative method stopped without meeting its tolerance."""

    def __init__(self, message: str, last_iterate: Optional[np.ndarray] = None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations
