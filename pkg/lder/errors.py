from __future__ import annotations

from typing import Optional


class LderError(Exception):
    kind = "error"


class DimensionError(LderError, ValueError):
    kind = "dimension"


class DomainError(LderError, ValueError):
    kind = "domain"


class LoadError(LderError):
    kind = "load"

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None) -> None:
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column!r}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ImputationError(LderError):
    kind = "imputation"

    def __init__(self, column: str) -> None:
        super().__init__(f"column {column!r} has no observed values")
        self.column = column
