"""Counter-based noise: Brownian increments and compound Poisson jumps.

Stream-key derivation (stable, so external tools can regenerate the noise):

    base  = (seed mod 2**32, seed // 2**32)
    inner = threefry2x32(base,  (stream_kind, population_index))
    key   = threefry2x32(inner, (particle_index, replica_index))

A value in a stream is ``threefry2x32(key, (step_index, slot))`` converted to a
53-bit uniform.  Slot layout per step:

* Gaussian streams: normal ``i`` uses the uniform pair at slots
  ``2*(i//2), 2*(i//2)+1`` through Box-Muller (cosine branch for even ``i``,
  sine branch for odd ``i``).
* Jump streams: slot 0 drives the Poisson count by inversion; event ``e`` uses
  slot ``1+2e`` for its time inside the step and ``2+2e`` for its mark.

Mean-field copies use ``stream_kind=COPY`` with ``particle_index`` = copy
number, ``population_index`` = alpha for per-population streams and
``replica_index`` = :class:`CopyStream` code.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from . import kernels

_MASK32 = 0xFFFFFFFF
SUBSEED_TAG = 0xA5A50001


class StreamKind(IntEnum):
    W_LOCAL = 0
    B_POP = 1
    N_LOCAL = 2
    N_POP = 3
    INIT = 4
    DISORDER = 5
    COPY = 6


class CopyStream(IntEnum):
    W = 0
    B = 1
    N = 2
    N_POP = 3
    INIT = 4


def _seed_words(run_seed: int):
    run_seed = int(run_seed)
    if not 0 <= run_seed < 2 ** 64:
        raise ValueError("run_seed must be an unsigned 64-bit integer")
    return run_seed & _MASK32, (run_seed >> 32) & _MASK32


def derive_keys(run_seed: int, kind, particle, population=0, replica=0):
    """Key words (k0, k1) for every broadcast combination of the index arrays."""
    b0, b1 = _seed_words(run_seed)
    kind, particle, population, replica = np.broadcast_arrays(
        np.asarray(kind, dtype=np.int64), np.asarray(particle, dtype=np.int64),
        np.asarray(population, dtype=np.int64), np.asarray(replica, dtype=np.int64))
    i0, i1 = kernels.threefry2x32(b0, b1, kind.astype(np.uint32), population.astype(np.uint32))
    return kernels.threefry2x32(i0, i1, particle.astype(np.uint32), replica.astype(np.uint32))


def subseed(run_seed: int, index: int) -> int:
    """Independent 64-bit seed number ``index`` derived from ``run_seed``."""
    b0, b1 = _seed_words(run_seed)
    lo, hi = kernels.threefry2x32(b0, b1, SUBSEED_TAG, int(index))
    return int(lo) | (int(hi) << 32)


@dataclass(frozen=True)
class NoiseStreamKey:
    run_seed: int
    stream_kind: StreamKind
    particle_index: int
    population_index: int = 0
    replica_index: int = 0

    def words(self):
        k0, k1 = derive_keys(self.run_seed, int(self.stream_kind), self.particle_index,
                             self.population_index, self.replica_index)
        return int(k0), int(k1)

    def with_kind(self, kind: StreamKind) -> "NoiseStreamKey":
        return replace(self, stream_kind=StreamKind(kind))


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: float


@dataclass
class JumpBatch:
    """Flattened jump events of a batch of streams for one step."""

    owner: np.ndarray
    time: np.ndarray
    mark: np.ndarray

    def __len__(self) -> int:
        return self.owner.shape[0]

    @classmethod
    def empty(cls) -> "JumpBatch":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0))


def _poisson_thresholds(mean: float) -> np.ndarray:
    """Cumulative Poisson(mean) probabilities until they saturate in double."""
    p = np.exp(-mean)
    cdf = [p]
    k = 0
    while cdf[-1] < 1.0 and k < 10_000:
        k += 1
        p = p * mean / k
        nxt = cdf[-1] + p
        if nxt == cdf[-1] and k > mean:
            break
        cdf.append(nxt)
    return np.asarray(cdf)


def poisson_from_uniform(u: np.ndarray, mean: float) -> np.ndarray:
    """Poisson(mean) counts by inversion of uniforms ``u``."""
    if mean <= 0:
        return np.zeros(np.shape(u), dtype=np.int64)
    cdf = _poisson_thresholds(mean)
    return np.minimum(np.searchsorted(cdf, u, side="left"), len(cdf) - 1).astype(np.int64)


def normals_from_uniforms(u: np.ndarray, dim: int) -> np.ndarray:
    """Box-Muller on interleaved uniform pairs (K, 2*ceil(dim/2)) -> (K, dim)."""
    u1 = 1.0 - u[:, 0::2]
    u2 = u[:, 1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    z = np.empty((u.shape[0], u1.shape[1] * 2))
    z[:, 0::2] = rad * np.cos(ang)
    z[:, 1::2] = rad * np.sin(ang)
    return z[:, :dim]


class StreamBatch:
    """A batch of noise streams addressed by key words; stateless."""

    def __init__(self, k0: np.ndarray, k1: np.ndarray):
        self.k0 = np.asarray(k0, dtype=np.uint32).reshape(-1)
        self.k1 = np.asarray(k1, dtype=np.uint32).reshape(-1)

    @classmethod
    def from_indices(cls, run_seed: int, kind, particle, population=0, replica=0) -> "StreamBatch":
        k0, k1 = derive_keys(run_seed, kind, particle, population, replica)
        return cls(k0, k1)

    @classmethod
    def from_keys(cls, keys: Sequence[NoiseStreamKey]) -> "StreamBatch":
        words = np.array([k.words() for k in keys], dtype=np.uint32).reshape(-1, 2)
        return cls(words[:, 0], words[:, 1])

    def __len__(self) -> int:
        return self.k0.shape[0]

    def take(self, idx) -> "StreamBatch":
        return StreamBatch(self.k0[idx], self.k1[idx])

    def uniforms(self, step: int, slots) -> np.ndarray:
        slots = np.asarray(slots, dtype=np.uint32)
        return kernels.hash_uniform(self.k0[:, None], self.k1[:, None], np.uint32(step), slots[None, :])

    def normals(self, step: int, dim: int) -> np.ndarray:
        if dim <= 0:
            raise ValueError("dim must be positive")
        npairs = (dim + 1) // 2
        return normals_from_uniforms(self.uniforms(step, np.arange(2 * npairs)), dim)

    def brownian(self, step: int, dim: int, dt: float) -> np.ndarray:
        return np.sqrt(dt) * self.normals(step, dim)

    def jumps(self, step: int, rate: float, dt: float,
              mark_sampler: Callable[[np.ndarray], np.ndarray] | None = None) -> JumpBatch:
        """Compound Poisson events of every stream in (step*dt, (step+1)*dt]."""
        if rate <= 0 or len(self) == 0:
            return JumpBatch.empty()
        counts = poisson_from_uniform(self.uniforms(step, [0])[:, 0], rate * dt)
        total = int(counts.sum())
        if total == 0:
            return JumpBatch.empty()
        owner = np.repeat(np.arange(len(self)), counts)
        start = np.cumsum(counts) - counts
        event = np.arange(total) - np.repeat(start, counts)
        k0, k1 = self.k0[owner], self.k1[owner]
        ut = kernels.hash_uniform(k0, k1, np.uint32(step), (1 + 2 * event).astype(np.uint32))
        um = kernels.hash_uniform(k0, k1, np.uint32(step), (2 + 2 * event).astype(np.uint32))
        marks = um if mark_sampler is None else np.asarray(mark_sampler(um), dtype=float)
        times = (step + (1.0 - ut)) * dt
        return JumpBatch(owner.astype(np.int64), times, marks)


# ------------------------------------------------------ single-stream API
def brownian_increment(key: NoiseStreamKey, step_index: int, dim: int, dt: float) -> np.ndarray:
    """dim i.i.d. N(0, dt) values, a pure function of (key, step_index)."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    return StreamBatch.from_keys([key]).brownian(step_index, dim, dt)[0]


def jump_events(key: NoiseStreamKey, step_index: int, nu_total: float, dt: float,
                mark_sampler: Callable[[np.ndarray], np.ndarray] | None = None) -> list[JumpEvent]:
    """Events of the key's Poisson stream during step ``step_index``."""
    batch = StreamBatch.from_keys([key]).jumps(step_index, nu_total, dt, mark_sampler)
    return [JumpEvent(float(t), float(m)) for t, m in zip(batch.time, batch.mark)]


def compensated_jump_sum(events: Sequence[JumpEvent], integrand: Callable[[float], np.ndarray],
                         compensator_value, dt: float) -> np.ndarray:
    """Sum of integrand(mark) over events minus compensator * dt."""
    total = -np.asarray(compensator_value, dtype=float) * dt
    for ev in events:
        total = total + np.asarray(integrand(ev.mark), dtype=float)
    return total
