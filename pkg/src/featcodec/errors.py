"""Exception types shared across the toolkit.

Everything user-facing derives from ValueError or RuntimeError so that
callers who do not care about the fine distinctions can still catch broad
categories. The CLI maps any FeatcodecError to exit code 1.
"""

from __future__ import annotations


class FeatcodecError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(FeatcodecError, ValueError):
    """An array argument has the wrong shape, width, or dimension count."""


class ConfigError(FeatcodecError, ValueError):
    """A configuration value is out of its legal range or inconsistent."""


class ProtocolError(FeatcodecError, ValueError):
    """An evaluation protocol precondition is violated, for example a
    verification split that contains only one class."""


class DegenerateFeatureError(FeatcodecError, ValueError):
    """A feature vector cannot be L2-normalized (zero norm) or is otherwise
    unusable for scoring."""


class CodingError(FeatcodecError, ValueError):
    """A symbol fell outside the declared alphabet during entropy coding."""


class TrainingDivergenceError(FeatcodecError, RuntimeError):
    """A loss or gradient became non-finite during optimization. The message
    names the parameter block that produced it."""


class FormatError(FeatcodecError, ValueError):
    """A serialized file is malformed. ``offset`` is the byte position at
    which parsing failed, when known."""

    def __init__(self, message: str, offset: int | None = None, source: str = ""):
        loc = []
        if source:
            loc.append(source)
        if offset is not None:
            loc.append(f"byte {offset}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.offset = offset
        self.source = source
