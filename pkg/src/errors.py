"""
Exception hierarchy for the cave exploration simulator.

Every error derives from :class:`CaveSimError` and from the builtin that a
caller would naturally catch (``ValueError`` for bad input, ``RuntimeError``
for a failed computation, ``KeyError`` for an unknown id).  The CLI maps the
input-side families to exit code 2 and everything else to exit code 1.
"""

from __future__ import annotations

from typing import Optional


class CaveSimError(Exception):
    """Base class for every error raised by this package."""


class InputError(CaveSimError, ValueError):
    """Invalid user input: files, scenarios, parameters."""


# ── Configuration ─────────────────────────────────────────────────────────────

class ConfigError(InputError):
    """A configuration value is missing, unknown, or out of range."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")

    def nested(self, prefix: str) -> "ConfigError":
        """Return a copy whose field path is prefixed with *prefix*."""
        msg = str(self).split(": ", 1)[-1]
        return ConfigError(f"{prefix}.{self.field}", msg)


# ── World ─────────────────────────────────────────────────────────────────────

class GenerationError(InputError):
    """Cave generation parameters cannot produce a valid world."""


class WorldFormatError(InputError):
    """A world file is malformed or describes an invalid world."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"world field '{field}': {message}")


class DomainError(CaveSimError, ValueError):
    """A query position lies outside the world extents."""


# ── Mapping ───────────────────────────────────────────────────────────────────

class MapError(CaveSimError):
    """Base class for belief-map errors."""


class EmptyReportError(MapError, ValueError):
    """Accuracy requested for a map without a single occupied cell."""


class MapFormatError(MapError, InputError):
    """A map export could not be parsed."""


class FrameMismatchError(MapError, InputError):
    """A map does not share the coordinate frame of the reference world."""


# ── Planning ──────────────────────────────────────────────────────────────────

class PlanningError(CaveSimError, RuntimeError):
    """Base class for path planning failures."""


class NoPathError(PlanningError):
    """No traversable route exists between start and goal."""


class StartInvalidError(PlanningError):
    """The start position is not in free space of the planning snapshot."""


# ── Motion ────────────────────────────────────────────────────────────────────

class MotionError(CaveSimError):
    """Base class for trajectory sampling and tracking errors."""


class ConstraintError(MotionError, ValueError):
    """Motion constraints are violated or produce a degenerate profile."""


class AppendError(MotionError, RuntimeError):
    """A new path cannot be joined to the current trajectory."""


class IndexOutOfRangeError(MotionError, IndexError):
    """A trajectory or profile index is outside the valid range."""


# ── Homing ────────────────────────────────────────────────────────────────────

class HomingError(CaveSimError):
    """Base class for homing-tree errors."""


class NoHomingPathError(HomingError, RuntimeError):
    """The current position cannot be attached to the homing tree."""


class TreeIncompatibleError(HomingError, ValueError):
    """Two homing trees do not share base station or minimum edge length."""


class TreeFormatError(HomingError, InputError):
    """A serialised homing tree is malformed."""


class UnknownNodeError(HomingError, KeyError):
    """A node id is not present in the tree."""

    def __init__(self, node_id: int, detail: Optional[str] = None) -> None:
        self.node_id = node_id
        text = f"unknown homing-tree node {node_id}"
        super().__init__(f"{text} ({detail})" if detail else text)

    def __str__(self) -> str:
        return str(self.args[0])


# ── Missions ──────────────────────────────────────────────────────────────────

class MissionAborted(CaveSimError, RuntimeError):
    """The engine failed mid-mission; *partial* is the result collected up to the failure."""

    def __init__(self, message: str, partial: Optional[object] = None) -> None:
        self.partial = partial
        super().__init__(message)
