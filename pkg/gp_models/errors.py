"""
Error Types
Exception hierarchy shared by the GP models, classifiers and experiment runner
"""

from typing import Optional


class GPDError(Exception):
    """Base class for all errors raised by this project"""
    pass


class InputError(GPDError, ValueError):
    """Invalid argument: wrong shape, out-of-range value, malformed input"""
    pass


class ConfigError(InputError):
    """Invalid experiment configuration"""
    pass


class DataFormatError(InputError):
    """Malformed dataset file"""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class NumericalError(GPDError):
    """Matrix factorization failed even after jitter escalation"""

    def __init__(self, message: str, condition: Optional[float] = None, jitter: Optional[float] = None):
        details = []
        if condition is not None:
            details.append(f"condition number ~ {condition:.3e}")
        if jitter is not None:
            details.append(f"last jitter {jitter:.1e}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.condition = condition
        self.jitter = jitter


class ModelError(GPDError):
    """Model training failed: every restart / grid point failed, or no convergence"""
    pass
