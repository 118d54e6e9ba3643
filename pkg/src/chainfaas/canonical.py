"""Canonical byte encoding and digests shared by every hashed or signed object."""

import hashlib
import json
from typing import Any

HEX_DIGEST_LEN = 64


def canonical_bytes(obj: Any) -> bytes:
    """JSON with sorted keys, no insignificant whitespace, UTF-8."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def canonical_text(obj: Any) -> str:
    return canonical_bytes(obj).decode("utf-8")


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj: Any) -> str:
    return digest(canonical_bytes(obj))


def is_hex_digest(value: Any) -> bool:
    if not isinstance(value, str) or len(value) != HEX_DIGEST_LEN:
        return False
    try:
        int(value, 16)
    except ValueError:
        return False
    return value == value.lower()
