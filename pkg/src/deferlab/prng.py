"""Counter-based random streams.

Every draw is ``mix64(key + (counter + 1) * GAMMA)`` where ``mix64`` is the
SplitMix64 finalizer (Steele, Lea & Flood 2014) and ``key`` is a 64-bit stream
key folded from a path of integers such as (suite, seed, purpose, lane).
Because a draw depends only on (key, counter), samples can be generated in
any order or in parallel and still be bit-identical.

Constants:
    GAMMA = 0x9E3779B97F4A7C15   (golden-ratio increment)
    M1    = 0xBF58476D1CE4E5B9
    M2    = 0x94D049BB133111EB
    shifts 30, 27, 31
"""

from __future__ import annotations

import zlib

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * M1) & _MASK
    z = ((z ^ (z >> 27)) * M2) & _MASK
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps mod 2**64, which is what we want
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(M2)
    return z ^ (z >> np.uint64(31))


def tag(name: str) -> int:
    """Stable integer id for a string label (CRC32)."""
    return zlib.crc32(name.encode("utf-8"))


def stream_key(*path) -> int:
    """Fold a path of ints/strings into a 64-bit stream key."""
    key = 0x6A09E667F3BCC909  # arbitrary non-zero root (sqrt(2) fraction bits)
    for part in path:
        if isinstance(part, str):
            part = tag(part)
        key = mix64(key ^ mix64((int(part) & _MASK) + GAMMA))
    return key


class Stream:
    """A keyed counter-based stream; draws are indexed by explicit counters."""

    def __init__(self, *path):
        self.path = path
        self.key = stream_key(*path)

    def child(self, *path) -> "Stream":
        return Stream(*self.path, *path)

    def bits(self, counters) -> np.ndarray:
        c = np.asarray(counters, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + (c + np.uint64(1)) * np.uint64(GAMMA)
            return _mix64_array(z)

    def uniform(self, counters) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        return (self.bits(counters) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_open(self, counters) -> np.ndarray:
        """Doubles in (0, 1]."""
        return 1.0 - self.uniform(counters)

    def normal(self, counters) -> np.ndarray:
        """Standard normals by Box-Muller; counter c uses draws 2c and 2c+1."""
        c = np.asarray(counters, dtype=np.uint64)
        u1 = self.uniform_open(c * np.uint64(2))
        u2 = self.uniform(c * np.uint64(2) + np.uint64(1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, counters, n: int) -> np.ndarray:
        """Integers in [0, n) by multiply-shift on the 53-bit uniform."""
        return np.minimum((self.uniform(counters) * n).astype(np.int64), n - 1)

    def permutation(self, n: int, counter: int = 0) -> np.ndarray:
        """Permutation of range(n): argsort of n keyed draws."""
        draws = self.bits(np.arange(n, dtype=np.uint64) + np.uint64(counter) * np.uint64(n))
        return np.argsort(draws, kind="stable")
