from __future__ import annotations

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_CAPACITY_ERROR = 3


class GridpackError(Exception):
    """Base class for all errors raised by gridpack."""


class InputError(GridpackError, ValueError):
    """Caller supplied something malformed; maps to exit code 2."""


class DimensionError(InputError):
    pass


class ShapeError(InputError):
    pass


class LayoutError(InputError):
    pass


class ArgumentError(InputError):
    pass


class GroupingError(InputError):
    pass


class StageUnderflowError(InputError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


class ManifestError(InputError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class CapacityError(GridpackError):
    """Memory budget cannot hold even a single example; maps to exit code 3."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY_ERROR
    return EXIT_INPUT_ERROR
