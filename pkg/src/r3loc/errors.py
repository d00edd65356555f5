"""Exception hierarchy shared by every r3loc module."""

from __future__ import annotations


class R3LocError(Exception):
    """Base class for all r3loc failures."""


class InvalidArgument(R3LocError, ValueError):
    pass


class DegenerateConfiguration(R3LocError):
    """Point set cannot determine a rigid transform (too few / collinear)."""


class FormatError(R3LocError):
    """Malformed file. ``offset`` is a byte offset or a 1-based line number."""

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        self.path = path
        self.offset = offset
        parts = [message]
        if path is not None:
            parts.append(f"file={path}")
        if offset is not None:
            parts.append(f"at={offset}")
        super().__init__(" ".join(parts))


class ConflictError(R3LocError):
    pass


class EmptyDatabase(R3LocError):
    pass


class InsufficientData(R3LocError):
    pass


class NoConsensus(R3LocError):
    pass


class NoOverlap(R3LocError):
    pass


class EmptyOverlap(R3LocError):
    """No superpixel/superpoint pair survives projection."""


class StructuralError(R3LocError):
    pass
