"""Seedable xoshiro256++ random streams.

Every random decision in the package flows through one of these streams so
that experiments are reproducible bit-for-bit from (seed, component name)
without depending on any library's generator internals.

A stream may carry several independent lanes: lane ``i`` is its own
xoshiro256++ sequence, which lets per-pixel or per-image noise be generated
with vectorized numpy integer ops instead of a Python loop per draw.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_U64 = np.uint64
_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a component name."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def _splitmix64_mix(x: np.ndarray) -> np.ndarray:
    z = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> _U64(27))) * _U64(0x94D049BB133111EB)
    return z ^ (z >> _U64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << _U64(k)) | (x >> _U64(64 - k))


class Xoshiro256PP:
    """Vector of independent xoshiro256++ generators (one per lane).

    State for lane ``i`` is initialized from the canonical splitmix64
    sequence seeded by ``seed``: words ``4i .. 4i+3`` of that sequence.
    """

    def __init__(self, seed: int, lanes: int = 1):
        if lanes < 1:
            raise ParameterError(f"lanes must be >= 1, got {lanes}")
        seed = int(seed) & _MASK64
        self.seed = seed
        self.lanes = lanes
        idx = np.arange(1, 4 * lanes + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            pre = _U64(seed) + idx * _U64(_GOLDEN)
            state = _splitmix64_mix(pre).reshape(lanes, 4)
        # xoshiro requires a not-all-zero state per lane
        dead = ~state.any(axis=1)
        if dead.any():
            state[dead, 0] = _U64(1)
        self._s = state

    def next_u64(self) -> np.ndarray:
        """Advance every lane once; returns (lanes,) uint64."""
        s = self._s
        s0 = s[:, 0].copy()
        s1 = s[:, 1].copy()
        with np.errstate(over="ignore"):
            result = _rotl(s0 + s[:, 3], 23) + s0
            t = s1 << _U64(17)
            s[:, 2] ^= s0
            s[:, 3] ^= s1
            s[:, 1] ^= s[:, 2]
            s[:, 0] ^= s[:, 3]
            s[:, 2] ^= t
            s[:, 3] = _rotl(s[:, 3], 45)
        return result

    def uniform(self) -> np.ndarray:
        """One double in [0, 1) per lane (upper 53 bits of the next word)."""
        return (self.next_u64() >> _U64(11)).astype(np.float64) * (2.0 ** -53)

    def normal_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """Two standard normals per lane via Box-Muller (consumes 2 words)."""
        u1 = 1.0 - self.uniform()  # (0, 1]: keeps log() finite
        u2 = self.uniform()
        r = np.sqrt(-2.0 * np.log(u1))
        th = 2.0 * np.pi * u2
        return r * np.cos(th), r * np.sin(th)

    # ---- scalar conveniences (lanes == 1) ----

    def _require_scalar(self):
        if self.lanes != 1:
            raise ParameterError("scalar draw on a multi-lane stream")

    def rand(self) -> float:
        self._require_scalar()
        return float(self.uniform()[0])

    def randint(self, n: int) -> int:
        """Integer in [0, n) from one uniform draw."""
        self._require_scalar()
        if n < 1:
            raise ParameterError(f"randint bound must be >= 1, got {n}")
        return min(int(self.rand() * n), n - 1)


def stream(seed: int, name: str, lanes: int = 1) -> Xoshiro256PP:
    """Derive the named substream: seed XOR fnv1a64(name)."""
    return Xoshiro256PP(int(seed) ^ fnv1a64(name), lanes=lanes)


def normals(seed: int, name: str, n: int) -> np.ndarray:
    """n standard normals, one lane per value (fully vectorized)."""
    if n == 0:
        return np.zeros(0)
    g = stream(seed, name, lanes=n)
    z, _ = g.normal_pair()
    return z


def permutation(seed: int, name: str, n: int) -> np.ndarray:
    """Deterministic permutation of range(n): argsort of one uniform draw per lane."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    g = stream(seed, name, lanes=n)
    return np.argsort(g.uniform(), kind="stable").astype(np.int64)
