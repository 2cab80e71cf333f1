"""Mean-field engine: the limit equation with the law replaced by M copies.

A copy carries one state per refinement cell (at the cell midpoint) and, if
requested, extra probe positions; all states of one copy share the copy's
noise (W, B^alpha, N, N^alpha) and its initial path per population, as in
the spatially indexed limit equation.  The copies form the *frozen law*: at
every step the interaction of any target is the R-weighted copy average of
the coefficient functionals evaluated on the copies' previous-step segments.
Representatives X-bar^r are then driven by their own network streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .core import (ConfigError, DisorderSample, DomainError, HypothesisRates, Sites,
                   SpatialLayout, TimeGrid)
from .noise import CopyStream, StreamBatch, StreamKind
from .network import (REPLICA_BLOCK, InteractionSource, InteractionTerms, ParticleStreams,
                      TrajectoryEnsemble, direct_interaction, fast_interaction,
                      fast_pairwise_reduction, integrate_rows, network_streams, replica_blocks,
                      run_blocks)
from .sdde import DEFAULT_R_GUARD


@dataclass
class FrozenLaw:
    """Copy ensemble of one disorder realisation.

    ``values`` has shape (T+1, M, Q, d) with Q = cells + probes; only cell
    states carry weight R(cell)/M, probes have weight 0.
    """

    grid: TimeGrid
    sites: Sites
    weights: np.ndarray
    cell_pop: np.ndarray
    P: int
    values: np.ndarray
    reduced: list | None
    model_id: str
    run_seed: int
    num_cells: int

    @property
    def M(self) -> int:
        return self.values.shape[1]

    @property
    def Q(self) -> int:
        return self.values.shape[2]

    def source(self, k: int) -> InteractionSource:
        """Copies' segments entering forward step ``k`` (window ending at t_k)."""
        n = self.grid.n
        w = self.values[k:k + n + 1]  # (n+1, M, Q, d)
        seg = w.reshape(n + 1, self.M * self.Q, -1).transpose(1, 0, 2)[None]
        return InteractionSource(self.sites.tile(self.M), np.tile(self.weights, self.M), seg,
                                 self.cell_pop, self.P)

    def cell_values(self) -> np.ndarray:
        return self.values[:, :, : self.num_cells]

    def probe_values(self) -> np.ndarray:
        return self.values[:, :, self.num_cells:]

    def second_moment(self):
        """Per cell E|X_t|^2 over copies and its standard error: (T+1, C) each."""
        q = np.einsum("tmcd,tmcd->tmc", self.cell_values(), self.cell_values())
        return q.mean(axis=1), q.std(axis=1, ddof=1) / math.sqrt(self.M)


def empirical_expectation(src: InteractionSource, t, tsites: Sites, x, functional, om) -> np.ndarray:
    """Sum over cells of R(cell) times the copy average of ``functional``.

    ``functional(t, s, s2, x, seg, om)`` is evaluated for every (target,
    copy) pair with the copy segment; the result has one row per target.
    """
    K = x.shape[0]
    Ns = len(src.sites)
    seg = src.seg[0]
    total = None
    for k in range(K):
        vals = functional(t, tsites.take(np.full(Ns, k)), src.sites, np.repeat(x[k:k + 1], Ns, axis=0), seg, om)
        vals = np.asarray(vals, dtype=float)
        wv = np.tensordot(src.weight, vals, axes=(0, 0))
        if total is None:
            total = np.zeros((K,) + np.shape(wv))
        total[k] = wv
    return total


def _check_coverage(layout: SpatialLayout, M: int):
    if M < 2:
        raise ConfigError("run.M: at least 2 copies are required")
    mass = layout.cell_mass
    if np.any(mass < 0):
        raise ConfigError("layout.cells: negative R-mass")


def _probe_sites(layout: SpatialLayout, probes) -> Sites:
    if probes is None or len(probes) == 0:
        return Sites(np.zeros((0, layout.positions.shape[1])), np.zeros(0, np.int64), np.zeros(0, np.int64))
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    member = np.stack([c.contains(pts) for c in layout.cells], axis=1)
    if np.any(member.sum(axis=1) != 1):
        raise ConfigError("run.probes: every probe must lie in exactly one cell")
    cell = np.argmax(member, axis=1).astype(np.int64)
    return Sites(pts, cell, layout.cell_population[cell])


def copy_streams(run_seed, coeffs: CoefficientSet, M: int, P: int, Q: int, interaction: bool):
    """Streams of the M copies; each copy drives its Q rows."""
    idx = np.arange(M)

    def sb(code, pop=0):
        return StreamBatch.from_indices(run_seed, int(StreamKind.COPY), idx, pop, int(code))

    NL = sb(CopyStream.N) if coeffs.local_jumps and coeffs.nu_total > 0 else None
    B = [sb(CopyStream.B, a) for a in range(P)] if interaction else []
    NP = [sb(CopyStream.N_POP, a) for a in range(P)] if interaction and coeffs.nu_total > 0 else []
    init = [sb(CopyStream.INIT, a) for a in range(P)]
    return ParticleStreams(sb(CopyStream.W), NL, B, NP, Q), init


def simulate_law(layout: SpatialLayout, coeffs: CoefficientSet, grid: TimeGrid, M: int,
                 omega: DisorderSample, run_seed: int, probes=None, method: str = "auto",
                 r_guard: float = DEFAULT_R_GUARD) -> FrozenLaw:
    """Evolve M copies of the limit equation interacting through their own average."""
    _check_coverage(layout, M)
    C, P = layout.num_cells, layout.P
    mid = layout.midpoint_sites()
    probe = _probe_sites(layout, probes)
    sites1 = Sites(np.concatenate([mid.pos, probe.pos]), np.concatenate([mid.cell, probe.cell]),
                   np.concatenate([mid.pop, probe.pop]))
    Q = len(sites1)
    weights = np.concatenate([layout.cell_mass / M, np.zeros(len(probe))])
    inter_on = coeffs.has_interaction
    streams, init = copy_streams(run_seed, coeffs, M, P, Q, inter_on)
    z = np.stack([coeffs.init_law.sample(init[a].normals(0, coeffs.d), np.full(M, a)) for a in range(P)])
    x0 = z[sites1.pop].transpose(1, 0, 2).reshape(M * Q, coeffs.d)  # row = copy * Q + q
    sites = sites1.tile(M)
    K = M * Q
    tgroup = np.zeros(K, dtype=np.int64)
    use_fast = coeffs.separable and method != "direct"
    reduced = [] if (inter_on and use_fast) else None
    om = omega.omega_prime
    cell_pop = layout.cell_population

    def inter_fn(k, t, seg):
        if not inter_on:
            return None
        src = InteractionSource(sites, np.tile(weights, M), seg[None], cell_pop, P)
        if use_fast:
            agg, wsum, _ = fast_pairwise_reduction(t, coeffs, src, om)
            reduced.append((agg, wsum))
            return fast_interaction(t, coeffs, sites, seg[:, -1], tgroup, src, om, reduced=(agg, wsum, None))
        return direct_interaction(t, coeffs, sites, seg[:, -1], tgroup, src, om)

    def describe(row):
        return f"mean-field copy {row // Q} (state {row % Q})"

    out = integrate_rows(coeffs, grid, om, sites, x0, streams, inter_fn, r_guard, describe)
    values = out.reshape(out.shape[0], M, Q, coeffs.d)
    return FrozenLaw(grid, sites1, weights, cell_pop, P, values, reduced, coeffs.model_id,
                     int(run_seed), C)


def law_interaction(law: FrozenLaw, coeffs: CoefficientSet, k: int, t: float, sites: Sites, x,
                    om, method: str = "auto") -> InteractionTerms:
    """Interaction of arbitrary targets against the frozen law at step ``k``."""
    K = x.shape[0]
    tgroup = np.zeros(K, dtype=np.int64)
    if law.reduced is not None and method != "direct":
        agg, wsum = law.reduced[k]
        src = InteractionSource(law.sites, law.weights, None, law.cell_pop, law.P)
        return fast_interaction(t, coeffs, sites, x, tgroup, src, om, reduced=(agg, wsum, None))
    return direct_interaction(t, coeffs, sites, x, tgroup, law.source(k), om)


@dataclass
class MeanFieldRun:
    ensemble: TrajectoryEnsemble
    law: FrozenLaw
    meta: dict = field(default_factory=dict)


def simulate_representatives(law: FrozenLaw, layout: SpatialLayout, coeffs: CoefficientSet,
                             omega: DisorderSample, run_seed: int, replicas=None, particle_ids=None,
                             method: str = "auto", r_guard: float = DEFAULT_R_GUARD,
                             threads: int | None = None,
                             replica_block: int = REPLICA_BLOCK) -> TrajectoryEnsemble:
    """X-bar^r for every position of ``layout``, driven by the network streams.

    Position ``i`` uses particle index ``particle_ids[i]`` so that the paths
    are coupled to a network run with the same seed and replicas.
    """
    grid = law.grid
    replicas = np.arange(1) if replicas is None else np.asarray(replicas, dtype=np.int64).reshape(-1)
    particle_ids = np.arange(layout.N) if particle_ids is None else np.asarray(particle_ids, dtype=np.int64)
    N, P = layout.N, layout.P
    inter_on = coeffs.has_interaction
    om = omega.omega_prime
    sites1 = layout.sites()

    def job(block):
        R = block.shape[0]
        streams, init = network_streams(run_seed, coeffs, particle_ids, block, P, inter_on)
        sites = sites1.tile(R)
        x0 = coeffs.init_law.sample(init.normals(0, coeffs.d), np.tile(sites1.pop, R))

        def inter_fn(k, t, seg):
            if not inter_on:
                return None
            return law_interaction(law, coeffs, k, t, sites, seg[:, -1], om, method)

        def describe(row):
            return f"representative {int(particle_ids[row % N])} (replica {int(block[row // N])})"

        out = integrate_rows(coeffs, grid, om, sites, x0, streams, inter_fn, r_guard, describe)
        return out.reshape(out.shape[0], R, N, coeffs.d)

    values = np.concatenate(run_blocks(job, replica_blocks(replicas, replica_block), threads), axis=1)
    return TrajectoryEnsemble(grid.times, values, sites1, "meanfield", coeffs.model_id, int(run_seed),
                              particle_ids, replicas, {"M": law.M, "law_seed": law.run_seed})


def simulate_mean_field(layout: SpatialLayout, coeffs: CoefficientSet, grid: TimeGrid, M: int,
                        omega: DisorderSample, run_seed: int, replicas=None, particle_ids=None,
                        probes=None, law: FrozenLaw | None = None, method: str = "auto",
                        r_guard: float = DEFAULT_R_GUARD, threads: int | None = None) -> MeanFieldRun:
    """Frozen law from M copies plus representatives at every position of ``layout``."""
    if law is None:
        law = simulate_law(layout, coeffs, grid, M, omega, run_seed, probes, method, r_guard)
    ens = simulate_representatives(law, layout, coeffs, omega, run_seed, replicas, particle_ids,
                                   method, r_guard, threads)
    return MeanFieldRun(ens, law, {"M": law.M})


# ------------------------------------------------------------------ bounds
def _check_nonneg(**kw):
    for k, v in kw.items():
        if v is not None and v < 0:
            raise DomainError(f"{k} must be >= 0")


def moment_bound_c1(t: float, P: int, init_sup_second_moment: float, rates: HypothesisRates) -> float:
    """(sup E|z|^2 + 1) * exp(int_0^t (K + 3 P Kbar + P) ds)."""
    _check_nonneg(t=t, P=P, init_sup_second_moment=init_sup_second_moment)
    expo = rates.K.integral(t) + 3 * P * rates.Kbar.integral(t) + P * t
    return (init_sup_second_moment + 1.0) * math.exp(expo)


def continuity_bound_c2(t: float, P: int, rates: HypothesisRates, c1_value: float) -> float:
    """exp(int_0^t (L + P Lbar + P) ds) * (1 + 3 C_1)."""
    _check_nonneg(t=t, P=P, c1_value=c1_value)
    expo = rates.L.integral(t) + P * rates.Lbar.integral(t) + P * t
    return math.exp(expo) * (1.0 + 3.0 * c1_value)


@dataclass
class BoundsTable:
    """Per grid time: empirical second moment, C_1, C_2 * eps and pass flags."""

    times: np.ndarray
    second_moment: np.ndarray
    second_moment_se: np.ndarray
    c1: np.ndarray
    c2_eps: np.ndarray
    pair_gap: np.ndarray
    pair_gap_se: np.ndarray
    moment_ok: np.ndarray
    continuity_ok: np.ndarray

    @property
    def ok(self) -> bool:
        return bool(np.all(self.moment_ok) and np.all(self.continuity_ok))


def bounds_table(law: FrozenLaw, layout: SpatialLayout, coeffs: CoefficientSet, omega: DisorderSample,
                 eps: float = 0.0, n_se: float = 3.0) -> BoundsTable:
    """Audit C_1 (all cells) and, with probes, C_2 * eps for probe pairs.

    Probe pairs are consecutive probes (0, 1), (2, 3), ...; times t < 0 are
    compared with the t = 0 bounds.
    """
    times = law.grid.times
    P = layout.P
    rates = omega.rates
    z2 = coeffs.init_law.sup_second_moment()
    tt = np.maximum(times, 0.0)
    c1 = np.array([moment_bound_c1(t, P, z2, rates) for t in tt])
    c2 = np.array([continuity_bound_c2(t, P, rates, c) for t, c in zip(tt, c1)])
    m, se = law.second_moment()
    i = np.argmax(m, axis=1)
    sm = m[np.arange(m.shape[0]), i]
    sse = se[np.arange(m.shape[0]), i]
    running = np.maximum.accumulate(sm - n_se * sse)
    moment_ok = running <= c1
    pv = law.probe_values()
    if pv.shape[2] >= 2:
        gaps = []
        for a in range(0, pv.shape[2] - 1, 2):
            diff = pv[:, :, a] - pv[:, :, a + 1]
            gaps.append(np.einsum("tmd,tmd->tm", diff, diff))
        q = np.stack(gaps, axis=2)  # (T, M, pairs)
        gm = q.mean(axis=1)
        gse = q.std(axis=1, ddof=1) / math.sqrt(q.shape[1])
        j = np.argmax(gm, axis=1)
        pg, pse = gm[np.arange(gm.shape[0]), j], gse[np.arange(gm.shape[0]), j]
    else:
        pg = np.zeros_like(times)
        pse = np.zeros_like(times)
    cont_ok = pg <= c2 * eps + n_se * pse
    return BoundsTable(times, sm, sse, c1, c2 * eps, pg, pse, moment_ok, cont_ok)
