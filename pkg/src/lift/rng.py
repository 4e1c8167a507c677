"""Portable seeded random streams.

All randomness in the package flows through :class:`SplitMix64`, a 64-bit
counter-based generator (Steele, Lea & Flood, 2014) whose output sequence is
trivial to reproduce in any language:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Uniform doubles take the top 53 bits, ``(x >> 11) * 2**-53``. Gaussians use
the Box-Muller transform on consecutive uniform pairs ``(u1, u2)`` with
``u1`` shifted into ``(0, 1]``; both outputs of each pair are used, and a
trailing odd draw discards its partner.

Sub-seeds are derived with :func:`derive_seed`, which folds an FNV-1a hash of
each role tag into the master seed through the SplitMix64 finalizer, so the
stream a component sees never depends on execution order.
"""

from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    """One SplitMix64 step applied to ``x`` as the state; returns the output."""
    with np.errstate(over="ignore"):
        z = np.array([(x + GOLDEN_GAMMA) & MASK64], dtype=np.uint64)
        return int(_mix(z)[0])


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def derive_seed(master: int, *tags: object) -> int:
    """Deterministic 64-bit sub-seed for ``master`` and a sequence of role tags."""
    h = int(master) & MASK64
    for tag in tags:
        h = mix64(h ^ fnv1a64(str(tag).encode("utf-8")))
    return h


class SplitMix64:
    """Vectorised SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._state = self.seed

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
            states = np.uint64(self._state) + steps
            out = _mix(states)
        self._state = (self._state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, n: int | tuple[int, ...]) -> np.ndarray:
        """Doubles in ``[0, 1)``."""
        shape = (n,) if np.isscalar(n) else tuple(n)
        size = int(np.prod(shape, dtype=np.int64))
        return ((self.next_u64(size) >> np.uint64(11)).astype(np.float64) * 2.0**-53).reshape(shape)

    def normal(self, n: int | tuple[int, ...]) -> np.ndarray:
        shape = (n,) if np.isscalar(n) else tuple(n)
        size = int(np.prod(shape, dtype=np.int64))
        pairs = (size + 1) // 2
        u = self.next_u64(2 * pairs)
        # u1 in (0, 1] keeps the log finite.
        u1 = ((u[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
        u2 = (u[1::2] >> np.uint64(11)).astype(np.float64) * 2.0**-53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:size].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of ``range(n)``: stable argsort of ``n`` fresh keys."""
        return np.argsort(self.next_u64(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, sorted ascending."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n} without replacement")
        return np.sort(self.permutation(n)[:k])


def stream(master: int, *tags: object) -> SplitMix64:
    return SplitMix64(derive_seed(master, *tags))
