"""Stable 64-bit hashing and seed derivation.

Python's builtin hash() is salted per process, so everything that must be
reproducible across runs (n-gram bucketing, per-utterance RNG streams,
sub-seeds for masking / corpus generation) goes through FNV-1a instead.
"""

from __future__ import annotations

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes | str, seed: int = 0) -> int:
    """FNV-1a over bytes, with the seed folded into the offset basis."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = (_FNV_OFFSET ^ (seed & _MASK64)) & _MASK64
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def substream_seed(seed: int, name: str) -> int:
    """Derive a named RNG sub-stream seed from the run seed.

    Keeps masking, mock-backend, and corpus randomness independent while all
    flowing from one configured seed.
    """
    return fnv1a64(name, seed=seed)
