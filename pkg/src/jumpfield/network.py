"""Finite network engine: local jump-diffusions plus population-normalised coupling.

Rows of a batch are (replica, particle) pairs flattened as ``rho * N + i``.
Within a step every particle sees the frozen previous-step segments of all
sources (Jacobi update), so rows can be advanced in any order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .coefficients import CoefficientSet
from .core import BlowUpError, DisorderSample, Sites, SpatialLayout, TimeGrid
from .noise import JumpBatch, StreamBatch, StreamKind
from .sdde import DEFAULT_R_GUARD, History, advance, check_guard, jump_increment

PAIR_CHUNK = 1 << 16
REPLICA_BLOCK = 16


# ------------------------------------------------------------ interaction
@dataclass
class InteractionSource:
    """Presynaptic rows: ``seg`` (G, Ns, n+1, d) for G independent groups.

    ``weight`` is the normalisation of each source (1/S_alpha for the
    network, R(cell)/M for mean-field copies).
    """

    sites: Sites
    weight: np.ndarray
    seg: np.ndarray
    cell_pop: np.ndarray
    P: int

    @property
    def num_cells(self) -> int:
        return self.cell_pop.shape[0]


@dataclass
class InteractionTerms:
    """Coupling seen by K targets: drift (K, d), beta (K, P, d, n_b),
    eta compensator (K, P, d) and the per-event eta integrand."""

    drift: np.ndarray
    beta: np.ndarray
    eta_comp: np.ndarray
    eta_events: Callable[[np.ndarray, int, np.ndarray], np.ndarray]


def _pairs(t, coeffs, tsites, x, tgroup, src, kk, self_idx):
    Ns = len(src.sites)
    nk = kk.shape[0]
    ti = np.repeat(kk, Ns)
    si = np.tile(np.arange(Ns), nk)
    w = src.weight[si]
    if self_idx is not None:
        w = np.where(self_idx[ti] == si, 0.0, w)
    return ti, si, w, tsites.take(ti), src.sites.take(si), x[ti], src.seg[tgroup[ti], si]


def direct_interaction(t, coeffs: CoefficientSet, tsites: Sites, x, tgroup, src: InteractionSource,
                       om, self_idx=None) -> InteractionTerms:
    """O(K * Ns) evaluation of the normalised sums of theta, beta and eta."""
    K, d = x.shape
    Ns = len(src.sites)
    P = src.P
    pops = src.sites.pop
    drift = np.zeros((K, d))
    beta = np.zeros((K, P, d, coeffs.n_b))
    comp = np.zeros((K, P, d))
    chunk = max(1, PAIR_CHUNK // max(Ns, 1))
    jumps_on = coeffs.nu_total > 0
    for a in range(0, K, chunk):
        kk = np.arange(a, min(K, a + chunk))
        nk = kk.shape[0]
        ti, si, w, s, s2, xx, seg = _pairs(t, coeffs, tsites, x, tgroup, src, kk, self_idx)
        th = coeffs.theta(t, s, s2, xx, seg, om) * w[:, None]
        drift[kk] = th.reshape(nk, Ns, d).sum(axis=1)
        be = (coeffs.beta(t, s, s2, xx, seg, om) * w[:, None, None]).reshape(nk, Ns, d, coeffs.n_b)
        if jumps_on:
            ec = (coeffs.eta_compensator(t, s, s2, xx, seg, om) * w[:, None]).reshape(nk, Ns, d)
        for alpha in range(P):
            sel = pops == alpha
            beta[kk, alpha] = be[:, sel].sum(axis=1)
            if jumps_on:
                comp[kk, alpha] = ec[:, sel].sum(axis=1)

    def eta_events(owner, alpha, xi):
        out = np.zeros((owner.shape[0], d))
        sel = np.flatnonzero(pops == alpha)
        for e in range(owner.shape[0]):
            k = owner[e]
            ns = sel.shape[0]
            w = src.weight[sel]
            if self_idx is not None:
                w = np.where(sel == self_idx[k], 0.0, w)
            vals = coeffs.eta(t, tsites.take(np.full(ns, k)), src.sites.take(sel),
                              np.repeat(x[k:k + 1], ns, axis=0), src.seg[tgroup[k], sel], om,
                              np.full(ns, xi[e]))
            out[e] = (vals * w[:, None]).sum(axis=0)
        return out

    return InteractionTerms(drift, beta, comp, eta_events)


def fast_pairwise_reduction(t, coeffs: CoefficientSet, src: InteractionSource, om):
    """Per-(group, cell) aggregates of weighted source features.

    Returns ``agg`` (G, C, J), ``wsum`` (C,) and the raw weighted features
    (G*Ns, J) used for self-exclusion.  Refuses non-separable models.
    """
    if not coeffs.separable:
        raise ValueError(f"model {coeffs.model_id!r} does not declare separable interactions")
    G, Ns = src.seg.shape[:2]
    C = src.num_cells
    seg = src.seg.reshape((G * Ns,) + src.seg.shape[2:])
    feats = coeffs.features(t, src.sites.tile(G), seg, om)
    wfeat = feats * np.tile(src.weight, G)[:, None]
    groups = np.repeat(np.arange(G) * C, Ns) + np.tile(src.sites.cell, G)
    agg = kernels.group_sum(groups, wfeat, G * C).reshape(G, C, -1)
    wsum = np.bincount(src.sites.cell, weights=src.weight, minlength=C)
    return agg, wsum, wfeat


def fast_interaction(t, coeffs: CoefficientSet, tsites: Sites, x, tgroup, src: InteractionSource,
                     om, self_idx=None, reduced=None) -> InteractionTerms:
    """O(K + Ns) interaction through per-cell aggregates."""
    agg, wsum, wfeat = reduced if reduced is not None else fast_pairwise_reduction(t, coeffs, src, om)
    K = x.shape[0]
    agg_t = agg[tgroup]
    wsum_t = np.broadcast_to(wsum, (K, wsum.shape[0]))
    if self_idx is not None:
        Ns = src.seg.shape[1]
        rows = tgroup * Ns + self_idx
        cells = src.sites.cell[self_idx]
        agg_t = agg_t.copy()
        agg_t[np.arange(K), cells] -= wfeat[rows]
        wsum_t = wsum_t.copy()
        wsum_t[np.arange(K), cells] -= src.weight[self_idx]
    drift, beta, eta_lin = coeffs.apply_features(t, tsites, x, agg_t, wsum_t, src.cell_pop, src.P, om)
    comp = eta_lin * coeffs.mark_weight_integral

    def eta_events(owner, alpha, xi):
        return eta_lin[owner, alpha] * coeffs.mark_weight(xi)[:, None]

    return InteractionTerms(drift, beta, comp, eta_events)


def interaction_terms(t, coeffs: CoefficientSet, tsites: Sites, x, tgroup, src: InteractionSource,
                      om, method: str = "auto", self_idx=None) -> InteractionTerms:
    """Normalised interaction sums for every target row.

    ``method`` is ``direct`` (pairwise), ``fast`` (per-cell aggregates, only
    for separable models) or ``auto`` (fast when available).
    """
    if method == "auto":
        method = "fast" if coeffs.separable else "direct"
    if method == "fast":
        return fast_interaction(t, coeffs, tsites, x, tgroup, src, om, self_idx)
    if method == "direct":
        return direct_interaction(t, coeffs, tsites, x, tgroup, src, om, self_idx)
    raise ValueError(f"unknown interaction method {method!r}")


@dataclass
class NetworkState:
    """Frozen network snapshot: rows (replica-major) with their delay windows.

    ``history`` holds the last n+1 grid values of every row, ``replicas``
    the number of independent replicas stacked in it.
    """

    history: History
    step_index: int
    grid: TimeGrid
    layout: SpatialLayout
    replicas: int = 1

    @classmethod
    def from_values(cls, layout: SpatialLayout, grid: TimeGrid, values) -> "NetworkState":
        """Constant windows from current values (N, d) or (R, N, d)."""
        v = np.asarray(values, dtype=float)
        v = v[None] if v.ndim == 2 else v
        R = v.shape[0]
        rows = v.reshape(R * layout.N, -1)
        return cls(History(np.repeat(rows[:, None, :], grid.n + 1, axis=1)), 0, grid, layout, R)

    def source(self) -> InteractionSource:
        lay = self.layout
        seg = self.history.segment()
        return InteractionSource(lay.sites(), 1.0 / lay.weights[lay.population],
                                 seg.reshape((self.replicas, lay.N) + seg.shape[1:]),
                                 lay.cell_population, lay.P)

    def interaction(self, coeffs: CoefficientSet, om, method: str = "auto",
                    exclude_self: bool = False) -> InteractionTerms:
        """Interaction terms of every row at the current step."""
        N, R = self.layout.N, self.replicas
        sites = self.layout.sites().tile(R)
        tgroup = np.repeat(np.arange(R), N)
        self_idx = np.tile(np.arange(N), R) if exclude_self else None
        x = self.history.segment()[:, -1]
        return interaction_terms(self.grid.time_of_step(self.step_index), coeffs, sites, x, tgroup,
                                 self.source(), om, method, self_idx)


# ----------------------------------------------------------------- noise
@dataclass
class ParticleStreams:
    """Stream batches of one block, each stream driving ``Q`` consecutive rows.

    Brownian and jump draws are made per stream and broadcast to its rows, so
    several rows (e.g. all cells of one mean-field copy) can share noise.
    """

    W: StreamBatch
    NL: StreamBatch | None
    B: list
    NP: list
    Q: int = 1  # rows per stream, stored contiguously

    def _rows(self, a):
        return a if self.Q == 1 else np.repeat(a, self.Q, axis=0)

    def _events(self, jb: JumpBatch) -> JumpBatch:
        if self.Q == 1 or len(jb) == 0:
            return jb
        q = np.arange(self.Q)
        owner = (jb.owner[:, None] * self.Q + q[None, :]).reshape(-1)
        order = np.argsort(owner, kind="stable")
        return JumpBatch(owner[order], np.repeat(jb.time, self.Q)[order], np.repeat(jb.mark, self.Q)[order])

    def draw(self, coeffs: CoefficientSet, k: int, dt: float, interaction: bool):
        dW = self._rows(self.W.brownian(k, coeffs.m, dt))
        local = None
        if self.NL is not None:
            local = self._events(self.NL.jumps(k, coeffs.nu_total, dt, coeffs.mark_sampler))
        dB, pop = None, None
        if interaction:
            dB = np.stack([self._rows(b.brownian(k, coeffs.n_b, dt)) for b in self.B], axis=1)
            if coeffs.nu_total > 0:
                pop = [self._events(s.jumps(k, coeffs.nu_total, dt, coeffs.mark_sampler)) for s in self.NP]
        return ParticleNoise(dW, local, dB, pop)


@dataclass
class ParticleNoise:
    dW: np.ndarray
    local_jumps: JumpBatch | None
    dB: np.ndarray | None
    pop_jumps: list | None


def network_streams(run_seed, coeffs: CoefficientSet, particles, replicas, P: int,
                    interaction: bool) -> tuple[ParticleStreams, StreamBatch]:
    """Streams W^r, N^r, B^{r,alpha}, N^{r,alpha} and the initial-path stream.

    Row order is replica-major: (rho, i) -> rho * len(particles) + i.
    """
    pi = np.tile(np.asarray(particles, dtype=np.int64), len(replicas))
    ri = np.repeat(np.asarray(replicas, dtype=np.int64), len(particles))

    def sb(kind, pop=0):
        return StreamBatch.from_indices(run_seed, int(kind), pi, pop, ri)

    NL = sb(StreamKind.N_LOCAL) if coeffs.local_jumps and coeffs.nu_total > 0 else None
    B = [sb(StreamKind.B_POP, a) for a in range(P)] if interaction else []
    NP = [sb(StreamKind.N_POP, a) for a in range(P)] if interaction and coeffs.nu_total > 0 else []
    return ParticleStreams(sb(StreamKind.W_LOCAL), NL, B, NP), sb(StreamKind.INIT)


def particle_increment(coeffs: CoefficientSet, t: float, dt: float, sites: Sites, seg, om,
                       noise: ParticleNoise, inter: InteractionTerms | None) -> np.ndarray:
    """New values after one Euler step of every row (local plus coupling)."""
    x = seg[:, -1]
    drift = coeffs.f(t, sites, x, om)
    diffusion = np.einsum("kdm,km->kd", coeffs.g(t, sites, x, om), noise.dW)
    jumps = None
    if noise.local_jumps is not None:
        j = noise.local_jumps
        vals = coeffs.h(t, sites.take(j.owner), x[j.owner], om, j.mark) if len(j) else np.zeros((0, coeffs.d))
        jumps = jump_increment(j, vals, coeffs.h_compensator(t, sites, x, om), dt)
    if inter is not None:
        drift = drift + inter.drift
        diffusion = diffusion + np.einsum("kpdb,kpb->kd", inter.beta, noise.dB)
        if noise.pop_jumps is not None:
            for alpha, ja in enumerate(noise.pop_jumps):
                vals = inter.eta_events(ja.owner, alpha, ja.mark) if len(ja) else np.zeros((0, coeffs.d))
                inc = jump_increment(ja, vals, inter.eta_comp[:, alpha], dt)
                jumps = inc if jumps is None else jumps + inc
    return advance(x, drift, dt, diffusion, jumps)


# ------------------------------------------------------------- ensembles
@dataclass
class TrajectoryEnsemble:
    """Trajectories (T+1, R, N, d) on the grid times of a network or mean-field run."""

    times: np.ndarray
    values: np.ndarray
    sites: Sites
    kind: str
    model_id: str
    run_seed: int
    particle_ids: np.ndarray
    replicas: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def stream_ids(self) -> tuple:
        """Address of the driving streams; equal ids mean shared noise."""
        return (int(self.run_seed), tuple(int(i) for i in self.particle_ids),
                tuple(int(r) for r in self.replicas))

    def second_moment(self):
        """Mean over replicas and particles of |X_t|^2, with its standard error."""
        q = np.einsum("trnd,trnd->trn", self.values, self.values)
        flat = q.reshape(q.shape[0], -1)
        n = flat.shape[1]
        se = flat.std(axis=1, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(q.shape[0])
        return flat.mean(axis=1), se

    def per_particle_second_moment(self):
        q = np.einsum("trnd,trnd->trn", self.values, self.values)
        return q.mean(axis=1), (q.std(axis=1, ddof=1) / np.sqrt(q.shape[1]) if q.shape[1] > 1
                                else np.zeros(q.shape[::2]))

    def cross_covariance(self, component: int = 0) -> np.ndarray:
        """Average covariance between distinct particles of one replica at each time."""
        y = self.values[..., component]
        T, R, N = y.shape
        if N < 2:
            return np.zeros(T)
        y = y - y.mean(axis=(1, 2), keepdims=True)
        s = y.sum(axis=2)
        pair = (s ** 2 - (y ** 2).sum(axis=2)) / (N * (N - 1))
        return pair.mean(axis=1)


def integrate_rows(coeffs: CoefficientSet, grid: TimeGrid, om, sites: Sites, x0: np.ndarray,
                   streams: ParticleStreams, inter_fn, r_guard: float, describe_row=None) -> np.ndarray:
    """Euler loop over a batch of rows with constant initial paths ``x0`` (K, d).

    ``inter_fn(k, t, seg)`` returns the :class:`InteractionTerms` of step k
    or ``None``.  Returns all grid values (T+1, K, d).
    """
    K, d = x0.shape
    hist = History(np.repeat(x0[:, None, :], grid.n + 1, axis=1))
    out = np.empty((grid.num_steps + 1, K, d))
    out[: grid.n + 1] = hist.segment().transpose(1, 0, 2)
    for k in range(grid.forward_steps):
        t = grid.time_of_step(k)
        seg = hist.segment()
        inter = inter_fn(k, t, seg)
        noise = streams.draw(coeffs, k, grid.dt, inter is not None)
        new = particle_increment(coeffs, t, grid.dt, sites, seg, om, noise, inter)
        try:
            check_guard(new, k + 1, r_guard, "particle")
        except BlowUpError as err:
            if describe_row is not None:
                err.args = (f"integration blow-up at step {k + 1}: {describe_row(err.index)} "
                            f"has |X| = {err.norm:.6g}",)
            raise
        hist.push(new)
        out[grid.n + 1 + k] = new
    return out


def _run_block(coeffs, layout, grid, omega, run_seed, replicas, particle_ids, method,
               exclude_self, r_guard, monitor):
    N, P = layout.N, layout.P
    R = replicas.shape[0]
    inter_on = coeffs.has_interaction
    streams, init = network_streams(run_seed, coeffs, particle_ids, replicas, P, inter_on)
    sites1 = layout.sites()
    sites = sites1.tile(R)
    x0 = coeffs.init_law.sample(init.normals(0, coeffs.d), np.tile(sites1.pop, R))
    weight = 1.0 / layout.weights[sites1.pop]
    tgroup = np.repeat(np.arange(R), N)
    self_idx = np.tile(np.arange(N), R) if exclude_self else None
    om = omega.omega_prime

    def inter_fn(k, t, seg):
        if not inter_on:
            return None
        src = InteractionSource(sites1, weight, seg.reshape((R, N) + seg.shape[1:]),
                                layout.cell_population, P)
        inter = interaction_terms(t, coeffs, sites, seg[:, -1], tgroup, src, om, method, self_idx)
        if monitor is not None:
            monitor(k, t, coeffs, sites, seg[:, -1], tgroup, src, om, self_idx, inter)
        return inter

    def describe(row):
        return f"particle {int(particle_ids[row % N])} (replica {int(replicas[row // N])})"

    out = integrate_rows(coeffs, grid, om, sites, x0, streams, inter_fn, r_guard, describe)
    return out.reshape(out.shape[0], R, N, coeffs.d)


def replica_blocks(replicas: np.ndarray, block: int) -> list:
    return [replicas[i:i + block] for i in range(0, replicas.shape[0], block)]


def run_blocks(fn, blocks, threads: int | None):
    """Run ``fn`` over blocks, possibly in threads; results keep block order."""
    if threads is None or threads <= 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, blocks))


def simulate_network(layout: SpatialLayout, coeffs: CoefficientSet, grid: TimeGrid,
                     omega: DisorderSample, run_seed: int, replicas=None, particle_ids=None,
                     method: str = "auto", exclude_self: bool = False,
                     r_guard: float = DEFAULT_R_GUARD, threads: int | None = None,
                     replica_block: int = REPLICA_BLOCK, monitor=None) -> TrajectoryEnsemble:
    """Simulate the network for each replica index and return all trajectories.

    Particle ``i`` of the layout is driven by streams with particle index
    ``particle_ids[i]`` (default ``i``).  Replicas are processed in blocks of
    fixed size so results do not depend on ``threads``.
    """
    replicas = np.arange(1) if replicas is None else np.asarray(replicas, dtype=np.int64).reshape(-1)
    particle_ids = np.arange(layout.N) if particle_ids is None else np.asarray(particle_ids, dtype=np.int64)
    if particle_ids.shape != (layout.N,):
        raise ValueError("particle_ids must have one entry per position")
    if coeffs.init_law.d != coeffs.d:
        raise ValueError("initial law dimension does not match the model")
    blocks = replica_blocks(replicas, replica_block)

    def job(b):
        return _run_block(coeffs, layout, grid, omega, run_seed, b, particle_ids, method,
                          exclude_self, r_guard, monitor)

    values = np.concatenate(run_blocks(job, blocks, threads), axis=1)
    return TrajectoryEnsemble(grid.times, values, layout.sites(), "network", coeffs.model_id,
                              int(run_seed), particle_ids, replicas,
                              {"layout": layout.summary(), "method": method})
