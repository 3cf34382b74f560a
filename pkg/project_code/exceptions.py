# project_code/exceptions.py
"""
Error types for the tamed EM library.

Every error raised on purpose by the library derives from NsddeError, so the
experiment runner can turn it into a machine-readable JSON line.
"""

from typing import Any, Dict, Optional


class NsddeError(Exception):
    """Base class for all library errors."""

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self)}


class InvalidRange(NsddeError, ValueError):
    """A parameter lies outside its admissible range."""


class NotCommensurate(NsddeError, ValueError):
    """T/h or tau/h is not an integer."""


class NotDivisible(NsddeError, ValueError):
    """A refinement factor does not divide the step counts."""


class GridMismatch(NsddeError, ValueError):
    """Two objects that must share a grid do not."""


class InsufficientData(NsddeError, ValueError):
    """Too few samples (paths, pairs) for an estimate."""


class NonPositiveValue(NsddeError, ValueError):
    """A log-log fit received a non-positive step or error."""


class UnknownProblem(NsddeError, LookupError):
    """Catalog id not registered."""

    def __str__(self) -> str:
        # LookupError would repr() a single argument
        return str(self.args[0]) if self.args else ""


class NonFiniteState(NsddeError, ArithmeticError):
    """
    The tamed recursion produced inf/NaN.

    step is the grid index n whose update failed (values[n+1] is the bad one),
    path the Monte Carlo path index when known.
    """

    def __init__(self, step: Optional[int] = None, path: Optional[int] = None, message: str = ""):
        self.step = step
        self.path = path
        where = []
        if step is not None:
            where.append(f"step n={step}")
        if path is not None:
            where.append(f"path {path}")
        text = message or "non-finite state"
        if where:
            text = f"{text} at {', '.join(where)}"
        super().__init__(text)

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["step"] = self.step
        out["path"] = self.path
        return out


class ConfigError(NsddeError, ValueError):
    """Experiment config could not be parsed or validated."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        self.field = field
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field '{field}'")
        text = f"{', '.join(prefix)}: {message}" if prefix else message
        super().__init__(text)

    def to_dict(self) -> Dict[str, Any]:
        out = super().to_dict()
        out["field"] = self.field
        out["line"] = self.line
        return out
