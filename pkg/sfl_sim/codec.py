"""
Canonical binary serialization and hashing.

Every value that is committed to the ledger is hashed over this encoding:
little-endian IEEE-754 doubles for reals, 64-bit little-endian integers
(signed, or unsigned above the signed range) and length-prefixed
sequences. Each value carries a one-byte type tag so that different shapes
never encode to the same bytes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from enum import Enum
from typing import Any

import numpy as np

from .exceptions import SpecificationError

_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_I64_MIN = -(1 << 63)
_I64_MAX = (1 << 63) - 1
_U64_MAX = (1 << 64) - 1


def _length(count: int) -> bytes:
    return _U64.pack(count)


def _encode_int(number: int) -> bytes:
    if _I64_MIN <= number <= _I64_MAX:
        return b"I" + _I64.pack(number)
    if 0 <= number <= _U64_MAX:
        return b"U" + _U64.pack(number)
    msg = f"Integer {number} does not fit into 64 bits"
    raise SpecificationError(msg)


def _encode_array(value: np.ndarray) -> bytes:
    shape = b"".join(_I64.pack(dim) for dim in value.shape)
    header = _length(value.ndim) + shape
    if np.issubdtype(value.dtype, np.bool_):
        return b"Q" + header + value.astype("u1").tobytes(order="C")
    if np.issubdtype(value.dtype, np.integer):
        return b"Z" + header + value.astype("<i8").tobytes(order="C")
    if np.issubdtype(value.dtype, np.floating):
        return b"A" + header + value.astype("<f8").tobytes(order="C")
    msg = f"Cannot canonically encode array of dtype {value.dtype}"
    raise TypeError(msg)


def encode(value: Any) -> bytes:  # noqa: PLR0911
    """Return the canonical byte encoding of ``value``."""
    if value is None:
        return b"N"
    # bool before int: bool is an int subclass
    if isinstance(value, bool | np.bool_):
        return b"B" + (b"\x01" if value else b"\x00")
    if isinstance(value, Enum):
        return b"E" + encode(value.value)
    if isinstance(value, int | np.integer):
        return _encode_int(int(value))
    if isinstance(value, float | np.floating):
        return b"F" + _F64.pack(float(value))
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return b"S" + _length(len(raw)) + raw
    if isinstance(value, bytes | bytearray):
        return b"Y" + _length(len(value)) + bytes(value)
    if isinstance(value, np.ndarray):
        return _encode_array(value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        parts = [
            encode(getattr(value, field.name))
            for field in dataclasses.fields(value)
            if field.metadata.get("canonical", True)
        ]
        return (
            b"C"
            + encode(type(value).__name__)
            + _length(len(parts))
            + b"".join(parts)
        )
    if isinstance(value, list | tuple):
        return b"L" + _length(len(value)) + b"".join(encode(item) for item in value)
    if isinstance(value, frozenset | set):
        items = sorted(encode(item) for item in value)
        return b"T" + _length(len(items)) + b"".join(items)
    if isinstance(value, dict):
        items = sorted((encode(key), encode(item)) for key, item in value.items())
        return (
            b"D"
            + _length(len(items))
            + b"".join(key + item for key, item in items)
        )
    msg = f"Cannot canonically encode {type(value).__name__}"
    raise TypeError(msg)


def sha256(data: bytes) -> bytes:
    """Return the SHA-256 digest of raw bytes."""
    return hashlib.sha256(data).digest()


def digest(value: Any) -> bytes:
    """Return the SHA-256 digest of the canonical encoding of ``value``."""
    return sha256(encode(value))
