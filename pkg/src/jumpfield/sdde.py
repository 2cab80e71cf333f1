"""Euler integrator for jump-diffusion SDDEs with path-dependent coefficients.

Coefficients are evaluated on the grid-frozen segment X_{kappa(n,(s-tau):s)},
i.e. on the n+1 most recent grid values, and all noise of a step is applied at
the step end.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .coefficients import SddeCoefficients
from .core import BlowUpError, DisorderSample, DomainError, GaussianInitialLaw, TimeGrid
from .noise import JumpBatch, NoiseStreamKey, StreamBatch, StreamKind

DEFAULT_R_GUARD = 1e6


class History:
    """Ring buffer holding the last n+1 grid values of a batch of paths.

    Every value is written twice, at slot ``p`` and ``p + n + 1``, so the
    ordered window is always a contiguous slice and costs no copy.
    """

    def __init__(self, init_segment: np.ndarray):
        seg = np.asarray(init_segment, dtype=float)
        self.n = seg.shape[1] - 1
        self.buf = np.concatenate([seg, seg], axis=1)
        self.start = 0

    @property
    def size(self) -> int:
        return self.n + 1

    def segment(self) -> np.ndarray:
        """Ordered window (K, n+1, d) as a read-only view; index n is current."""
        v = self.buf[:, self.start:self.start + self.n + 1]
        v.flags.writeable = False
        return v

    def lag(self, j: int) -> np.ndarray:
        return self.buf[:, self.start + j]

    @property
    def current(self) -> np.ndarray:
        return self.buf[:, self.start + self.n].copy()

    def push(self, x: np.ndarray) -> None:
        # the oldest value at slot start leaves the window
        self.buf[:, self.start] = x
        self.buf[:, self.start + self.n + 1] = x
        self.start = (self.start + 1) % (self.n + 1)


@dataclass
class SddeState:
    """Paths (batch K) at forward step ``step_index`` with their delay window."""

    history: History
    step_index: int
    grid: TimeGrid

    @property
    def current(self) -> np.ndarray:
        return self.history.current

    @property
    def time(self) -> float:
        return self.grid.time_of_step(self.step_index)

    @classmethod
    def from_initial(cls, grid: TimeGrid, init_values: np.ndarray) -> "SddeState":
        """Constant initial paths from values (K, d); or full segments (K, n+1, d)."""
        v = np.asarray(init_values, dtype=float)
        if v.ndim == 2:
            v = np.repeat(v[:, None, :], grid.n + 1, axis=1)
        if v.shape[1] != grid.n + 1:
            raise ValueError("initial segment length must be n+1")
        return cls(History(v), 0, grid)


@dataclass
class StepNoise:
    """Noise of one step for a batch: Brownian increments and jump events."""

    dW: np.ndarray
    jumps: JumpBatch


def check_guard(x: np.ndarray, step: int, r_guard: float, what: str = "particle") -> None:
    norms = np.sqrt(np.einsum("...d,...d->...", x, x)).reshape(-1)
    bad = ~np.isfinite(norms) | (norms > r_guard)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise BlowUpError(step, i, float(norms[i]), what)


def jump_increment(jumps: JumpBatch, values: np.ndarray, compensator: np.ndarray, dt: float) -> np.ndarray:
    """Per-owner sum of integrand ``values`` (E, d) minus compensator * dt."""
    K = compensator.shape[0]
    if len(jumps):
        total = kernels.group_sum(jumps.owner, values, K)
    else:
        total = np.zeros_like(compensator)
    return total - compensator * dt


def advance(x, drift, dt, diffusion, jumps):
    """x + drift*dt + diffusion + jumps, summed in this fixed order."""
    out = x + drift * dt
    out = out + diffusion
    if jumps is not None:
        out = out + jumps
    return out


def euler_step(state: SddeState, coeffs: SddeCoefficients, noise: StepNoise,
               omega: DisorderSample, r_guard: float = DEFAULT_R_GUARD) -> SddeState:
    """Advance every path by one grid step (in place) and return the state."""
    dt = state.grid.dt
    t = state.time
    om = omega.omega_prime
    seg = state.history.segment()
    x = seg[:, -1]
    drift = coeffs.f(t, seg, om)
    diffusion = np.einsum("kdm,km->kd", coeffs.g(t, seg, om), noise.dW)
    jumps = None
    if coeffs.nu_total > 0:
        j = noise.jumps
        vals = coeffs.h(t, seg[j.owner], om, j.mark) if len(j) else np.zeros((0, coeffs.d))
        jumps = jump_increment(j, vals, coeffs.h_compensator(t, seg, om), dt)
    new = advance(x, drift, dt, diffusion, jumps)
    check_guard(new, state.step_index + 1, r_guard, "path")
    state.history.push(new)
    state.step_index += 1
    return state


@dataclass
class PathMoments:
    """Per-grid-time ensemble statistics over a batch of paths."""

    times: np.ndarray
    mean: np.ndarray        # (T, d)
    var: np.ndarray         # (T, d) unbiased
    sq_mean: np.ndarray     # (T,)  mean of |X|^2
    sq_se: np.ndarray       # (T,)  standard error of sq_mean
    count: int
    var_se: np.ndarray | None = None  # (T, d) large-sample standard error of var

    @property
    def mean_se(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.var, 0) / self.count)


class _MomentAccumulator:
    def __init__(self, T, d):
        self.s1 = np.zeros((T, d))
        self.s2 = np.zeros((T, d))
        self.s3 = np.zeros((T, d))
        self.s4 = np.zeros((T, d))
        self.q1 = np.zeros(T)
        self.q2 = np.zeros(T)
        self.count = 0

    def add(self, i, x):
        self.s1[i] += x.sum(axis=0)
        x2 = x * x
        self.s2[i] += x2.sum(axis=0)
        self.s3[i] += (x2 * x).sum(axis=0)
        self.s4[i] += (x2 * x2).sum(axis=0)
        q = np.einsum("kd,kd->k", x, x)
        self.q1[i] += q.sum()
        self.q2[i] += (q * q).sum()

    def result(self, times, count):
        n = count
        mean = self.s1 / n
        var = (self.s2 - n * mean ** 2) / max(n - 1, 1)
        qm = self.q1 / n
        qv = (self.q2 - n * qm ** 2) / max(n - 1, 1)
        e2, e3, e4 = self.s2 / n, self.s3 / n, self.s4 / n
        m2 = e2 - mean ** 2
        m4 = e4 - 4 * mean * e3 + 6 * mean ** 2 * e2 - 3 * mean ** 4
        var_se = np.sqrt(np.maximum(m4 - m2 ** 2, 0) / n)
        return PathMoments(times, mean, var, qm, np.sqrt(np.maximum(qv, 0) / n), n, var_se)


def initial_values(law: GaussianInitialLaw, streams: StreamBatch, pop, d: int) -> np.ndarray:
    return law.sample(streams.normals(0, d), pop)


def simulate_sdde_paths(coeffs: SddeCoefficients, grid: TimeGrid, omega: DisorderSample,
                        run_seed: int, replicas=None, particle: int = 0, population: int = 0,
                        init_law: GaussianInitialLaw | None = None, record: str = "full",
                        r_guard: float = DEFAULT_R_GUARD):
    """Simulate a batch of independent paths, one per replica index.

    ``record="full"`` returns the trajectory array (num_steps+1, K, d) on
    ``grid.times``; ``record="moments"`` returns :class:`PathMoments` without
    storing paths.
    """
    replicas = np.arange(1) if replicas is None else np.asarray(replicas, dtype=np.int64).reshape(-1)
    K = replicas.shape[0]
    law = init_law or coeffs.init_law
    w = StreamBatch.from_indices(run_seed, int(StreamKind.W_LOCAL), particle, population, replicas)
    nj = StreamBatch.from_indices(run_seed, int(StreamKind.N_LOCAL), particle, population, replicas)
    z = StreamBatch.from_indices(run_seed, int(StreamKind.INIT), particle, population, replicas)
    x0 = initial_values(law, z, np.full(K, population), coeffs.d)
    state = SddeState.from_initial(grid, x0)
    T = grid.num_steps + 1
    full = record == "full"
    if full:
        out = np.empty((T, K, coeffs.d))
        out[: grid.n + 1] = state.history.segment().transpose(1, 0, 2)
    else:
        acc = _MomentAccumulator(T, coeffs.d)
        seg0 = state.history.segment()
        for j in range(grid.n + 1):
            acc.add(j, seg0[:, j])
    empty = JumpBatch.empty()
    for k in range(grid.forward_steps):
        dW = w.brownian(k, coeffs.m, grid.dt)
        jumps = nj.jumps(k, coeffs.nu_total, grid.dt, coeffs.mark_sampler) if coeffs.nu_total > 0 else empty
        euler_step(state, coeffs, StepNoise(dW, jumps), omega, r_guard)
        if full:
            out[grid.n + 1 + k] = state.current
        else:
            acc.add(grid.n + 1 + k, state.current)
    return out if full else acc.result(grid.times, K)


def simulate_sdde(coeffs: SddeCoefficients, grid: TimeGrid, omega: DisorderSample,
                  key: NoiseStreamKey, init_law: GaussianInitialLaw | None = None,
                  r_guard: float = DEFAULT_R_GUARD) -> np.ndarray:
    """Single path on the whole grid [-tau, T]: array (num_steps+1, d).

    The key's (seed, particle, population, replica) address selects the W,
    N and initial-condition streams; its kind is ignored.
    """
    traj = simulate_sdde_paths(coeffs, grid, omega, key.run_seed, [key.replica_index],
                               key.particle_index, key.population_index, init_law, "full", r_guard)
    return traj[:, 0, :]


def sdde_moment_bound(t: float, init_sup_second_moment: float, rates) -> float:
    """Bound on 1 + 2 E|X_t|^2: (1 + 2 sup E|z|^2) * exp(2 int_0^t K ds)."""
    if t < 0 or init_sup_second_moment < 0:
        raise DomainError("t and the initial second moment must be >= 0")
    return (1.0 + 2.0 * init_sup_second_moment) * float(np.exp(2.0 * rates.K.integral(t)))
