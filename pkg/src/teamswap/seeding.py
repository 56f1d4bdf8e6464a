"""Deterministic per-component seeds derived from one master seed."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *parts) -> int:
    """Stable 63-bit seed from a master seed and labels; independent of PYTHONHASHSEED."""
    text = "/".join([str(int(master))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little") >> 1
