"""Reproducible 64-bit RNG streams.

The generator is splitmix64: a single uint64 state advanced by a fixed odd
increment, with the output passed through an avalanche mix.  The same update
is implemented in ``_kernels`` for compiled loops; an :class:`RngStream` hands
its state array to kernels, so Python-side draws and kernel draws consume one
shared sequence and stay bitwise reproducible per (seed, stream id).
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """Avalanche-mix a 64-bit integer (splitmix64 finalizer)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def derive_stream_state(seed: int, stream_id: int) -> int:
    """Initial state for a (seed, stream id) pair."""
    return mix64((seed & _MASK) ^ mix64((stream_id & _MASK) * GOLDEN_GAMMA + 1))


def derive_worker_seed(master: int, index: int) -> int:
    """Mix a master seed with a worker/task index into a fresh 64-bit seed.

    Injective in ``index`` for fixed ``master`` (the pre-mix increment is odd,
    so distinct indices below 2**64 map to distinct mix inputs, and the mix is
    a bijection on 64-bit words).
    """
    if index < 0:
        raise ValueError("worker index must be nonnegative")
    return mix64((master + (index + 1) * GOLDEN_GAMMA) & _MASK)


class RngStream:
    """Deterministic stream of 64-bit draws keyed by (seed, stream id)."""

    __slots__ = ("seed", "stream_id", "_state")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = seed & _MASK
        self.stream_id = stream_id & _MASK
        self._state = np.array([derive_stream_state(seed, stream_id)], dtype=np.uint64)

    def state_array(self) -> np.ndarray:
        """The mutable uint64 state; kernels advance it in place."""
        return self._state

    def next_uint64(self) -> int:
        s = (int(self._state[0]) + GOLDEN_GAMMA) & _MASK
        self._state[0] = s
        return mix64(s)

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_uint64() >> 11) * (2.0 ** -53)

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def spawn(self, child_id: int) -> "RngStream":
        """An independent child stream, deterministic in (seed, ids)."""
        return RngStream(derive_worker_seed(self.seed, self.stream_id), child_id)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
