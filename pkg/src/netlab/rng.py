"""Counter-based random numbers keyed by (replica, site, time, stream).

Every random quantity in a realization is a pure function of its key, so
arrows can be materialized lazily, in any order, by any worker, and always
agree. The mixer is the SplitMix64 finalizer. Scalar versions are compiled
with numba for hot loops and the same source is compiled to numpy ufuncs
for vectorized code, so both paths produce identical bits.
"""

from __future__ import annotations

import numba
import numpy as np

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_CX = np.uint64(0xD1B54A32D192ED03)
_CT = np.uint64(0xAEF17502108EF2D9)
_CS = np.uint64(0xDB4F0B9175AE2165)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_UNIT = 1.0 / 9007199254740992.0  # 2**-53

# stream tags
STREAM_W1 = 0
STREAM_BRANCH = 1
STREAM_W2 = 2
STREAM_COUNT = 3
STREAM_EXTRA = 4  # extra Bernoulli draws use STREAM_EXTRA + k
STREAM_CHOOSER = 1 << 20
STREAM_INIT = 1 << 21


def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


mix64 = numba.njit(cache=True)(_mix64)


def _site_base(key, x, t):
    return mix64(mix64(key ^ (np.uint64(x) * _CX)) + np.uint64(t) * _CT)


def _draw(base, stream):
    return mix64(base + (np.uint64(stream) + np.uint64(1)) * _CS)


def _unit(h):
    return np.float64(h >> _S11) * _UNIT


draw = numba.njit(cache=True)(_draw)
unit = numba.njit(cache=True)(_unit)


def _uniform(base, stream):
    return unit(draw(base, stream))


site_base = numba.njit(cache=True)(_site_base)
uniform = numba.njit(cache=True)(_uniform)

site_base_v = numba.vectorize(["uint64(uint64, int64, int64)"], cache=True)(_site_base)
uniform_v = numba.vectorize(["float64(uint64, int64)"], cache=True)(_uniform)
mix64_v = numba.vectorize(["uint64(uint64)"], cache=True)(_mix64)


def seed64(seed: int) -> np.uint64:
    """Reduce an arbitrary Python integer seed to 64 bits."""
    return np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)


def replica_keys(seed: int, reps) -> np.ndarray:
    """Per-replica keys, a pure function of (seed, replica index)."""
    reps = np.asarray(reps, dtype=np.int64)
    root = mix64_v(np.asarray(seed64(seed), dtype=np.uint64))
    return mix64_v(root ^ ((reps.astype(np.uint64) + np.uint64(1)) * _GOLDEN))


def site_uniforms(keys: np.ndarray, x, t, stream: int) -> np.ndarray:
    """Uniforms on [0, 1) for sites ``(x, t)`` of the replicas owning ``keys``."""
    base = site_base_v(keys, np.asarray(x, dtype=np.int64), np.asarray(t, dtype=np.int64))
    return uniform_v(base, np.int64(stream))
