"""Reproducible random streams.

Every replicate gets its own generator derived from ``(master_seed, *key)``
through :class:`numpy.random.SeedSequence` spawn keys, so results do not
depend on scheduling or thread count.

The limit-process simulator needs randomness addressed by node of the
infinite 4-ary split tree rather than by draw order. For that we use the
SplitMix64 output function evaluated at counter ``2*node_id (+1)`` under a
64-bit stream key; see :func:`split_uniforms`.
"""

from __future__ import annotations

import numba
import numpy as np

DEFAULT_SEED = 20120101

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for the stream ``(master_seed, *key)``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def stream_key(master_seed: int, *key: int) -> int:
    """64-bit key for counter-based draws, derived like :func:`stream`."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@numba.njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, inline="always")
def _unit(key, counter):
    # SplitMix64 output at position `counter`; top 53 bits mapped into (0, 1).
    z = _mix(key + (counter + np.uint64(1)) * _GOLDEN)
    return (float(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def split_uniforms(key, node_id):
    """The (U, V) pair attached to ``node_id`` under stream ``key``."""
    c = np.uint64(node_id) * np.uint64(2)
    return _unit(key, c), _unit(key, c + np.uint64(1))


def split_uniforms_py(key: int, node_id: int) -> tuple[float, float]:
    """Pure-Python twin of :func:`split_uniforms`, used as a test oracle."""
    mask = (1 << 64) - 1

    def unit(counter: int) -> float:
        z = (key + (counter + 1) * 0x9E3779B97F4A7C15) & mask
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        z ^= z >> 31
        return ((z >> 11) + 0.5) / 9007199254740992.0

    return unit(2 * node_id), unit(2 * node_id + 1)
