"""Counter-based deterministic hashing.

Every stochastic-looking quantity in the map synthesizer is a pure function
of integer coordinates and a seed, computed through a splitmix64-style
finalizer.  Nothing here keeps state, so any cell/pixel/feature can be
materialized lazily, in any order, on any thread, with identical results.
"""

from __future__ import annotations

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_CHAIN_INIT = 0x8BADF00D5EEDBA5E

# domain tags keep independent streams (cell latents, resample latents,
# pixel noise, corner features) from colliding even for equal coordinates
TAG_GLOBAL = 0x01
TAG_CELL = 0x02
TAG_RESAMPLE = 0x03
TAG_PIXEL_NOISE = 0x04
TAG_FEATURE = 0x05
TAG_SPIKE = 0x06


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= _U64
    z = ((z ^ (z >> 30)) * _MIX_A) & _U64
    z = ((z ^ (z >> 27)) * _MIX_B) & _U64
    return z ^ (z >> 31)


def hash_ints(*vals: int) -> int:
    """Hash a tuple of (possibly negative) python ints to a uint64."""
    h = _CHAIN_INIT
    for v in vals:
        h = mix64(h ^ ((v & _U64) * _GOLDEN & _U64))
    return h


def unit_float(u: int) -> float:
    """Map a uint64 to [0, 1) using the top 53 bits."""
    return (u >> 11) * 2.0**-53


def sym_float(u: int) -> float:
    """Map a uint64 to [-1, 1)."""
    return unit_float(u) * 2.0 - 1.0


def _mix64_np(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX_A)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def hash_grid(*vals) -> np.ndarray:
    """Vectorized hash_ints: scalars and broadcastable integer arrays mix in order.

    Bit-identical to hash_ints applied elementwise.
    """
    with np.errstate(over="ignore"):
        h = None
        arrs = [np.asarray(v) for v in vals]
        shape = np.broadcast_shapes(*(a.shape for a in arrs))
        h = np.full(shape, _CHAIN_INIT, dtype=np.uint64)
        for a in arrs:
            a64 = a.astype(np.int64, copy=False).astype(np.uint64)
            h = _mix64_np(h ^ (a64 * np.uint64(_GOLDEN)))
        return h


def unit_float_grid(u: np.ndarray) -> np.ndarray:
    return (u >> np.uint64(11)).astype(np.float64) * 2.0**-53


def sym_float_grid(u: np.ndarray) -> np.ndarray:
    return unit_float_grid(u) * 2.0 - 1.0
