"""Counter-based random streams.

Every random draw in a run is a pure function of integer keys, typically
``(seed, stream, tick, index, slot)``. Nothing depends on call order, so a
run can be replayed, and robots or tiles can be evaluated in any order with
identical results.
"""

from __future__ import annotations

import zlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def stream_key(name: str) -> int:
    """Stable integer id for a named stream."""
    return zlib.crc32(name.encode("utf-8"))


def _as_u64(key) -> np.ndarray:
    if isinstance(key, str):
        key = stream_key(key)
    if isinstance(key, (int, np.integer)):
        return np.atleast_1d(np.uint64(int(key) & _MASK64))
    arr = np.asarray(key)
    if arr.dtype.kind == "i":
        return np.atleast_1d(arr.astype(np.int64).view(np.uint64))
    return np.atleast_1d(arr.astype(np.uint64))


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def hash_keys(*keys) -> np.ndarray:
    """Hash a sequence of keys (ints, strings or int arrays) to uint64.

    Array keys broadcast against each other; the result always has at least
    one dimension.
    """
    with np.errstate(over="ignore"):
        h = np.atleast_1d(np.uint64(0x243F6A8885A308D3))
        for k in keys:
            h = _splitmix(h ^ _as_u64(k))
        return h


def uniform(*keys) -> np.ndarray:
    """Uniform floats in [0, 1) keyed by ``keys``."""
    return (hash_keys(*keys) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def normal(*keys) -> np.ndarray:
    """Standard normal draws keyed by ``keys`` (Box-Muller on two sub-slots)."""
    u1 = 1.0 - uniform(*keys, 0x5A5A)
    u2 = uniform(*keys, 0xA5A5)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def derive_seed(master_seed: int, name: str, tick: int = 0) -> int:
    """Per-module sub-seed so that adding a module never shifts another's draws."""
    return int(hash_keys(master_seed, name, tick)[0])


class KeyedStream:
    """Draws for a batch of entities at one tick.

    Each call consumes a new slot, so the n-th draw for entity ``i`` is
    always ``hash(seed, stream, tick, i, n)`` no matter how many entities
    are in the batch or in which order they appear.
    """

    def __init__(self, seed: int, stream: str, tick: int, ids):
        self.seed = int(seed)
        self.stream = stream_key(stream)
        self.tick = int(tick)
        self.ids = np.asarray(ids, dtype=np.int64)
        self._slot = 0

    def _next_slot(self) -> int:
        slot = self._slot
        self._slot += 1
        return slot

    def normal(self) -> np.ndarray:
        return normal(self.seed, self.stream, self.tick, self.ids, self._next_slot())

    def uniform(self) -> np.ndarray:
        return uniform(self.seed, self.stream, self.tick, self.ids, self._next_slot())
