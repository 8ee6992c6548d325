"""Counter-based uniforms: one independent stream per particle.

A stream is a 64-bit key derived from ``(seed, stream id)``; draw number ``k``
of that stream is the SplitMix64 output for state ``key + (k + 1) * gamma``.
Any draw can be computed directly from its coordinates, so results never
depend on how particles are split across threads.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["stream_key", "uniform", "stream_keys", "uniforms"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_GAMMA_STREAM = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def stream_key(seed, stream):
    base = _mix(np.uint64(seed) + _GAMMA)
    return _mix(base + (np.uint64(stream) + _ONE) * _GAMMA_STREAM)


@njit(inline="always")
def uniform(key, counter):
    """Draw *counter* of the stream *key* (a ``uint64``), uniform on ``[0, 1)`` with 53 bits."""
    z = _mix(np.uint64(key) + (np.uint64(counter) + _ONE) * _GAMMA)
    return np.float64(z >> _S11) * _INV53


@njit(cache=True)
def stream_keys(seed, first, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = stream_key(seed, first + i)
    return out


@njit(cache=True)
def uniforms(key, start, count):
    """``count`` consecutive draws of one stream, from draw number *start*."""
    out = np.empty(count, dtype=np.float64)
    k0 = np.uint64(key)
    for k in range(count):
        out[k] = uniform(k0, start + k)
    return out
