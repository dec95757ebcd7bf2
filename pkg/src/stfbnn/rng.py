"""Deterministic pseudo-random streams.

The generator is a counter-mode splitmix64: stream element ``i`` is the
xorshift-multiply mix of ``seed + (i+1) * GOLDEN`` (all arithmetic mod 2**64).
Because each element depends only on the seed and its position, whole blocks
vectorize, and an identical seed always reproduces the identical stream on
every platform. Gaussian draws come from the Box-Muller transform applied to
consecutive uniform pairs, so they inherit the same determinism.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = float(2.0**-53)


def _mix(z: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer (xorshift-multiply), elementwise on uint64.
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Prng:
    """Seeded stream with a position counter; never shares state implicitly.

    All draws advance ``counter`` by the number of raw 64-bit words consumed,
    so interleaving differently sized requests stays reproducible.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = int(counter)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` 64-bit words of the stream."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(self.seed + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape) if shape else float(u[0])

    def gaussian(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """N(mean, std**2) draws via Box-Muller on uniform pairs."""
        if std < 0:
            raise InputError(f"std must be >= 0, got {std}")
        n = int(np.prod(shape)) if shape else 1
        npairs = (n + 1) // 2
        words = self.raw(2 * npairs)
        # u1 in (0, 1] so log(u1) is finite; u2 in [0, 1).
        u1 = ((words[:npairs] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = (words[npairs:] >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        out = mean + std * z
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, n: int, low: int, high: int) -> np.ndarray:
        """``n`` ints uniform over [low, high)."""
        if high <= low:
            raise InputError(f"empty range [{low}, {high})")
        u = self.uniform((n,))
        return (low + np.floor(u * (high - low))).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Permutation of range(n), derived from uniform sort keys."""
        return np.argsort(self.uniform((n,)), kind="stable")

    def spawn(self, tag: int) -> "Prng":
        """Independent child stream keyed by an integer tag."""
        with np.errstate(over="ignore"):
            child = _mix(self.seed + np.uint64((tag + 1) & 0xFFFFFFFFFFFFFFFF) * _MIX1)
        return Prng(int(child))
