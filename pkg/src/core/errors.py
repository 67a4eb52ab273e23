from typing import Optional


class PanelValidationError(ValueError):
    """Raised when inputs violate a data or treatment invariant"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class EstimationError(RuntimeError):
    """Raised when an estimator cannot produce an identified estimate"""
