"""Stable 64-bit string hashing for bucketing and seed derivation.

FNV-1a accumulation followed by a 64-bit avalanche finalizer (the
murmur3 fmix64 constants). Pure Python, process-independent, and frozen
for the lifetime of the repo: golden-value tests pin exact outputs, so
any change here is a breaking change to experiment assignments.
"""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def hash64(data: str | bytes) -> int:
    """Hash text to a uniformly mixed unsigned 64-bit integer."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    # fmix64 finalizer: FNV-1a alone mixes the high bits poorly, and the
    # unit-interval mapping below keys off them.
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & _MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & _MASK64
    h ^= h >> 33
    return h


def unit_interval(data: str | bytes) -> float:
    """Map text to a deterministic float in [0, 1)."""
    return hash64(data) / 2.0**64
