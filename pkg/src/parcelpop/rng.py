"""Deterministic counter-based random streams.

Every stochastic draw in the package is keyed by an explicit counter path
(seed, iteration, parcel id, ...) instead of consuming a shared sequential
stream. Results are therefore independent of evaluation order and thread
count, and any single draw can be reproduced in isolation.

Two entry points:

* :func:`uniform_open` / :func:`uniform_open_array` - a splitmix64-based
  hash of the counter path mapped to a float in the open interval (0, 1).
* :func:`substream` - a numpy Generator derived from the counter path via
  SeedSequence spawn keys, for bulk sampling (population synthesis).
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


def _splitmix64(z: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    """One splitmix64 finalization round (wraps modulo 2**64)."""
    with np.errstate(over="ignore"):
        z = (z + _GOLDEN) & _U64(0xFFFFFFFFFFFFFFFF)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _mix(seed: int, *counters) -> np.ndarray | np.uint64:
    """Hash a counter path into a 64-bit state.

    Counters may be scalars or one broadcastable numpy integer array
    (vectorized draws for a whole parcel set in one call).
    """
    h = _splitmix64(_U64(seed & 0xFFFFFFFFFFFFFFFF))
    with np.errstate(over="ignore"):
        for c in counters:
            if isinstance(c, np.ndarray):
                h = _splitmix64(h ^ c.astype(np.uint64))
            else:
                h = _splitmix64(h ^ _U64(int(c) & 0xFFFFFFFFFFFFFFFF))
    return h


def uniform_open(seed: int, *counters) -> float:
    """Uniform draw in the open interval (0, 1) for a counter path.

    The 53-bit hash k maps to (k + 0.5) / 2**53, so 0.0 and 1.0 are
    unreachable exactly and the mean is exactly 0.5.
    """
    h = _mix(seed, *counters)
    return (float(h >> _U64(11)) + 0.5) * 2.0**-53


def uniform_open_array(seed: int, *counters) -> np.ndarray:
    """Vectorized :func:`uniform_open`; one counter may be an array."""
    h = _mix(seed, *counters)
    if not isinstance(h, np.ndarray):
        h = np.asarray([h], dtype=np.uint64)
    return ((h >> _U64(11)).astype(np.float64) + 0.5) * 2.0**-53


def substream(seed: int, *path: int) -> np.random.Generator:
    """Independent numpy Generator for a (seed, *path) key.

    Built on SeedSequence spawn keys so distinct paths give statistically
    independent streams and the same path always reproduces the same one.
    """
    key = tuple(int(p) & 0xFFFFFFFF for p in path)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**128 - 1), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
