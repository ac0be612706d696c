"""Deterministic project-wide randomness.

Every stochastic choice in the package (corpus synthesis, weight init,
measurement matrices, latent restarts, shuffling) flows through streams
derived here, so all artifacts are reproducible from integer seeds alone
and independent of interpreter or library global state.

The core generator is counter-based SplitMix64: draw ``i`` of a stream is
``mix64(seed + (i + 1) * GOLDEN)``, which makes any sub-range of a stream
computable without sequencing and keeps bulk draws fully vectorized.
Normals use the Box-Muller transform over pairs of uniforms.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(values):
    """SplitMix64 finalizer: avalanche 64-bit values (vectorized)."""
    z = np.asarray(values, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))


def derive_seed(master, *path):
    """Derive a child seed from a master seed and a path of labels.

    Path elements may be integers or short strings; the fold is a
    SplitMix64 avalanche per element, so distinct paths give independent
    streams while identical paths always reproduce the same seed.
    """
    z = int(mix64(np.uint64((int(master) ^ _GOLDEN) & _MASK64)))
    for part in path:
        if isinstance(part, str):
            h = 0
            for byte in part.encode("utf-8"):
                h = int(mix64(np.uint64((h + byte + _GOLDEN) & _MASK64)))
        elif isinstance(part, (int, np.integer)):
            h = int(part) & _MASK64
        else:
            raise TypeError(f"seed path elements must be int or str, got {type(part)!r}")
        z = int(mix64(np.uint64(((z ^ h) + _GOLDEN) & _MASK64)))
    return z


class Prng:
    """Counter-based SplitMix64 stream of uniforms, normals, permutations."""

    def __init__(self, seed):
        self._seed = np.uint64(int(seed) & _MASK64)
        self._count = 0

    def raw(self, n):
        """Next ``n`` raw 64-bit draws."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return mix64(self._seed + idx * np.uint64(_GOLDEN))

    def uniform(self, shape=()):
        """Uniform float64 draws in [0, 1) with 53-bit resolution."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()):
        """Standard-normal draws via Box-Muller over uniform pairs."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        raw = self.raw(2 * pairs)
        # u1 in (0, 1] so the log is finite; u2 in [0, 1).
        u1 = ((raw[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (raw[pairs:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def permutation(self, n):
        """A uniform permutation of range(n) (argsort of distinct raw keys)."""
        return np.argsort(self.raw(n), kind="stable")

    def integers(self, high, shape=()):
        """Uniform integers in [0, high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        u = self.uniform(shape)
        return np.minimum(np.floor(np.asarray(u) * high), high - 1).astype(np.int64)
