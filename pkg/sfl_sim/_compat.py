"""Backports for interpreters older than Python 3.11."""

from __future__ import annotations

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):  # type: ignore[no-redef]
        """Equivalent of :class:`enum.StrEnum` for explicit string values."""

        __str__ = str.__str__
        __format__ = str.__format__

__all__ = ["StrEnum"]
