"""Exception hierarchy shared across the package.

Validation problems subclass ``ValidationError`` (CLI exit code 2); everything
else under ``NavigSceneError`` is a runtime failure (exit code 1).
"""

from __future__ import annotations


class NavigSceneError(Exception):
    """Base class for all package errors."""


class ValidationError(NavigSceneError, ValueError):
    """Input violates a documented precondition."""


class NonFinite(ValidationError):
    pass


class PoleProximity(ValidationError):
    pass


class InvalidDims(ValidationError):
    pass


class BadFrameCount(ValidationError):
    pass


class EmptyFrames(ValidationError):
    pass


class EmptyAnswer(ValidationError):
    pass


class EmptyCandidateSet(ValidationError):
    pass


class EmptySequence(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class TokenOutOfRange(ValidationError):
    pass


class DimMismatch(ValidationError):
    pass


class MissingGuidance(ValidationError):
    def __init__(self, scene_id: str):
        super().__init__(f"no guidance record for scene {scene_id!r}")
        self.scene_id = scene_id


class RoutingError(NavigSceneError):
    pass


class NoPath(RoutingError):
    pass


class DegenerateRoute(RoutingError):
    pass


class ParseError(NavigSceneError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: " if where else f"line {line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line = line
        self.path = path


class SceneError(NavigSceneError):
    """Wraps a failure raised while processing one scene."""

    def __init__(self, scene_id: str, cause: Exception):
        super().__init__(f"scene {scene_id!r}: {type(cause).__name__}: {cause}")
        self.scene_id = scene_id
        self.cause = cause
