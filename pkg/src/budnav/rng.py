"""Deterministic derivation of named random streams.

Every random draw in the package flows from a single run seed through a
named child stream.  A stream is identified by a tuple of parts (purpose
string plus integer ids) hashed into a 64-bit seed, so the draws a
consumer sees depend only on the stream name, never on scheduling,
iteration order, or thread count.
"""
from __future__ import annotations

import hashlib

import numpy as np


def stream_id(*parts) -> int:
    """Stable 64-bit hash of the given parts (ints or strings)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")  # separator so ("ab", 1) != ("a", "b1")
    return int.from_bytes(h.digest(), "little")


def stream(*parts) -> np.random.Generator:
    """Independent generator for a named purpose.

    Example: stream(run_seed, "rollout", episode_id, rollout_index).
    """
    return np.random.Generator(np.random.PCG64(stream_id(*parts)))
