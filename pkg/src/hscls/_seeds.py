"""Deterministic seed derivation.

All randomness in the toolkit flows from a single user-supplied seed.
Sub-seeds for independent streams (split, upsample, init, shuffle, ...) are
derived as ``SHA-256(f"{seed}/{label}")`` truncated to 63 bits, so the scheme
is stable across platforms and Python versions.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, label: str) -> int:
    """Derive a child seed for the stream named ``label``."""
    digest = hashlib.sha256(f"{seed}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)
