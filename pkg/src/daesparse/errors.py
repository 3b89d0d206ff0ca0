"""Exception hierarchy.

Every error carries the module and operation that raised it so the CLI can
emit one structured diagnostic per failure and map it to an exit code.
"""

from __future__ import annotations


class DaeError(Exception):
    exit_code = 1
    code = "error"

    def __init__(self, message: str, *, module: str = "", op: str = ""):
        super().__init__(message)
        self.module = module
        self.op = op

    def as_dict(self) -> dict:
        return {
            "error": self.code,
            "module": self.module,
            "operation": self.op,
            "message": str(self),
        }


class ConfigError(DaeError, ValueError):
    exit_code = 2
    code = "ConfigError"


class DataError(DaeError, ValueError):
    exit_code = 3
    code = "DataError"


class EmptyTable(DataError):
    code = "EmptyTable"


class DuplicateName(DataError):
    code = "DuplicateName"


class NonNumericCell(DataError):
    code = "NonNumericCell"


class NonMonotonicTime(DataError):
    code = "NonMonotonicTime"


class NonUniformGrid(DataError):
    code = "NonUniformGrid"


class MissingState(DataError):
    code = "MissingState"


class LibraryError(DaeError, ValueError):
    exit_code = 3
    code = "LibraryError"


class ModelError(DaeError, ValueError):
    exit_code = 3
    code = "ModelError"


class RoleConflict(ModelError):
    code = "RoleConflict"


class NumericalError(DaeError, ArithmeticError):
    exit_code = 4
    code = "NumericalError"


class DegenerateTarget(NumericalError):
    code = "DegenerateTarget"


class NonFiniteEvaluation(NumericalError):
    code = "NonFiniteEvaluation"


class IntegratorFailure(NumericalError):
    code = "IntegratorFailure"


class NoRelationFound(DaeError):
    exit_code = 5
    code = "NoRelationFound"
