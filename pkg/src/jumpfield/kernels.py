"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Two kernels dominate the runtime of every engine:

* ``hash_uniform`` -- the Threefry-2x32 (20 rounds) counter-based block
  cipher turned into 53-bit uniforms.  Every random number in the package
  comes from here.
* ``group_sum`` -- ordered accumulation of rows into groups, used for the
  per-cell interaction aggregates.

Integer hashing is exact and the group sum accumulates in input order on both
paths, so the two backends agree bit for bit.
"""
from __future__ import annotations

import numpy as np

from . import _accel

ROTATIONS = (13, 15, 26, 6, 17, 29, 16, 24)
PARITY = 0x1BD11BDA
_TWO_M53 = 2.0 ** -53


# --------------------------------------------------------------------- numpy
def threefry2x32_numpy(k0, k1, c0, c1):
    """Vectorised Threefry-2x32-20.  All inputs are broadcast uint32 arrays."""
    k0, k1, c0, c1 = np.broadcast_arrays(
        np.asarray(k0, dtype=np.uint32), np.asarray(k1, dtype=np.uint32),
        np.asarray(c0, dtype=np.uint32), np.asarray(c1, dtype=np.uint32))
    with np.errstate(over="ignore"):
        return _threefry_rounds(k0, k1, c0, c1)


def _threefry_rounds(k0, k1, c0, c1):
    ks = (k0, k1, k0 ^ k1 ^ np.uint32(PARITY))
    x0 = c0 + k0
    x1 = c1 + k1
    for i in range(20):
        r = ROTATIONS[i % 8]
        x0 = x0 + x1
        x1 = (x1 << np.uint32(r)) | (x1 >> np.uint32(32 - r))
        x1 = x1 ^ x0
        if i % 4 == 3:
            s = (i + 1) // 4
            x0 = x0 + ks[s % 3]
            x1 = x1 + ks[(s + 1) % 3] + np.uint32(s)
    return x0, x1


def _words_to_uniform(x0, x1):
    hi = (x0 >> np.uint32(5)).astype(np.float64)
    lo = (x1 >> np.uint32(6)).astype(np.float64)
    return (hi * 67108864.0 + lo) * _TWO_M53


def _hash_uniform_numpy(k0, k1, c0, c1):
    x0, x1 = threefry2x32_numpy(k0, k1, c0, c1)
    return _words_to_uniform(x0, x1)


def _group_sum_numpy(groups, values, ngroups):
    out = np.empty((ngroups, values.shape[1]))
    for j in range(values.shape[1]):
        out[:, j] = np.bincount(groups, weights=values[:, j], minlength=ngroups)
    return out


# --------------------------------------------------------------------- numba
@_accel.njit
def _round(x0, x1, r):
    mask = np.uint64(0xFFFFFFFF)
    x0 = (x0 + x1) & mask
    x1 = ((x1 << r) | (x1 >> (np.uint64(32) - r))) & mask
    return x0, x1 ^ x0


@_accel.njit
def _tf_scalar(k0, k1, c0, c1):
    mask = np.uint64(0xFFFFFFFF)
    k2 = (k0 ^ k1 ^ np.uint64(PARITY)) & mask
    x0 = (c0 + k0) & mask
    x1 = (c1 + k1) & mask
    ks = (k0, k1, k2)
    for s in range(1, 6):
        if s % 2 == 1:
            x0, x1 = _round(x0, x1, np.uint64(13))
            x0, x1 = _round(x0, x1, np.uint64(15))
            x0, x1 = _round(x0, x1, np.uint64(26))
            x0, x1 = _round(x0, x1, np.uint64(6))
        else:
            x0, x1 = _round(x0, x1, np.uint64(17))
            x0, x1 = _round(x0, x1, np.uint64(29))
            x0, x1 = _round(x0, x1, np.uint64(16))
            x0, x1 = _round(x0, x1, np.uint64(24))
        x0 = (x0 + ks[s % 3]) & mask
        x1 = (x1 + ks[(s + 1) % 3] + np.uint64(s)) & mask
    return x0, x1


@_accel.njit
def _threefry_flat_numba(k0, k1, c0, c1, out0, out1):
    for i in range(k0.shape[0]):
        a, b = _tf_scalar(np.uint64(k0[i]), np.uint64(k1[i]),
                          np.uint64(c0[i]), np.uint64(c1[i]))
        out0[i] = np.uint32(a)
        out1[i] = np.uint32(b)


@_accel.njit
def _hash_uniform_flat_numba(k0, k1, c0, c1, out):
    for i in range(k0.shape[0]):
        a, b = _tf_scalar(np.uint64(k0[i]), np.uint64(k1[i]),
                          np.uint64(c0[i]), np.uint64(c1[i]))
        hi = np.float64(a >> np.uint64(5))
        lo = np.float64(b >> np.uint64(6))
        out[i] = (hi * 67108864.0 + lo) * 1.1102230246251565e-16


@_accel.njit
def _group_sum_numba(groups, values, ngroups):
    out = np.zeros((ngroups, values.shape[1]))
    for i in range(values.shape[0]):
        g = groups[i]
        for j in range(values.shape[1]):
            out[g, j] += values[i, j]
    return out


# ------------------------------------------------------------------ dispatch
def _flat_u32(*arrays):
    b = np.broadcast_arrays(*[np.asarray(a, dtype=np.uint32) for a in arrays])
    shape = b[0].shape
    return shape, [np.array(x, order="C").reshape(-1) for x in b]


def threefry2x32(k0, k1, c0, c1, backend: str | None = None):
    """Threefry-2x32-20 block function on broadcast uint32 arrays."""
    use_numba = _accel.USE_NUMBA if backend is None else backend == "numba"
    if not use_numba:
        return threefry2x32_numpy(k0, k1, c0, c1)
    shape, (a, b, c, d) = _flat_u32(k0, k1, c0, c1)
    o0 = np.empty(a.shape[0], dtype=np.uint32)
    o1 = np.empty(a.shape[0], dtype=np.uint32)
    _threefry_flat_numba(a, b, c, d, o0, o1)
    return o0.reshape(shape), o1.reshape(shape)


def hash_uniform(k0, k1, c0, c1, backend: str | None = None) -> np.ndarray:
    """Uniforms in [0, 1) with 53 random bits, one per (key, counter) pair."""
    use_numba = _accel.USE_NUMBA if backend is None else backend == "numba"
    if not use_numba:
        return _hash_uniform_numpy(k0, k1, c0, c1)
    shape, (a, b, c, d) = _flat_u32(k0, k1, c0, c1)
    out = np.empty(a.shape[0])
    _hash_uniform_flat_numba(a, b, c, d, out)
    return out.reshape(shape)


def group_sum(groups, values, ngroups: int, backend: str | None = None) -> np.ndarray:
    """Sum rows of ``values`` (n, k) into ``ngroups`` bins, in row order."""
    groups = np.ascontiguousarray(groups, dtype=np.int64)
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        return group_sum(groups, values[:, None], ngroups, backend)[:, 0]
    use_numba = _accel.USE_NUMBA if backend is None else backend == "numba"
    if use_numba:
        return _group_sum_numba(groups, values, int(ngroups))
    return _group_sum_numpy(groups, values, int(ngroups))
