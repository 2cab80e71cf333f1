"""Propagation-of-chaos protocol: coupled network / mean-field runs.

The network particle at position r and the mean-field representative at r
are driven by the same streams (W, B, N, N-pop, initial path), so the
squared gap E|X^{r,A_N}_t - Xbar^r_t|^2 measures the distance between the
finite system and its limit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, DisorderDistribution
from .core import ConfigError, DisorderSample, HypothesisRates, SpatialLayout, TimeGrid
from .meanfield import FrozenLaw, continuity_bound_c2, moment_bound_c1, simulate_law, simulate_representatives
from .network import TrajectoryEnsemble, simulate_network
from .noise import subseed


class CouplingError(ValueError):
    """Raised when two runs are not driven by the same streams."""


@dataclass
class GapResult:
    """Squared gaps of a coupled pair of runs."""

    times: np.ndarray
    sq: np.ndarray        # (T, R, N) per replica
    mean: np.ndarray      # (T, N) replica mean
    se: np.ndarray        # (T, N)
    sup: float
    sup_se: float
    argmax: tuple
    initial_window_max: float


def coupled_gap(net: TrajectoryEnsemble, mf: TrajectoryEnsemble) -> GapResult:
    """Per-(t, r) replica-mean squared gap and its sup over grid t and r."""
    if net.stream_ids != mf.stream_ids:
        raise CouplingError("runs do not share stream keys (seed, particle ids or replicas differ)")
    if net.values.shape != mf.values.shape or not np.array_equal(net.times, mf.times):
        raise CouplingError("runs are on different grids or layouts")
    diff = net.values - mf.values
    sq = np.einsum("trnd,trnd->trn", diff, diff)
    R = sq.shape[1]
    mean = sq.mean(axis=1)
    se = sq.std(axis=1, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(mean)
    t, r = np.unravel_index(int(np.argmax(mean)), mean.shape)
    init = net.times <= 0
    return GapResult(net.times, sq, mean, se, float(mean[t, r]), float(se[t, r]), (int(t), int(r)),
                     float(sq[init].max()) if np.any(init) else 0.0)


def theoretical_gap_bound(layout: SpatialLayout, rates: HypothesisRates, T: float, eps: float = 0.0) -> float:
    """Right-hand side of the coupling estimate for one disorder realisation.

    144 * sum_alpha (#/S^2 + eps #^2/S^2 + M_alpha sum_m (#_m/S - R_m)^2)
        * exp(int_0^T (2L + Lbar (6 w + P) + K + 3P Kbar + 3P) ds),
    with w = sum_alpha #^2/S^2.
    """
    P = layout.P
    counts = layout.population_counts()
    S2 = layout.weights ** 2
    lead = np.sum(counts / S2 + eps * counts ** 2 / S2 + layout.cell_discrepancy())
    w = layout.weight_bound()
    expo = (2 * rates.L.integral(T) + (6 * w + P) * rates.Lbar.integral(T) + rates.K.integral(T)
            + 3 * P * rates.Kbar.integral(T) + 3 * P * T)
    return float(144.0 * lead * math.exp(expo)) if expo < 700 else math.inf


@dataclass
class ChaosEntry:
    N: int
    S: list
    M: int
    draws: int
    replicas: int
    gap: float
    se: float
    per_draw: list
    per_draw_se: list
    bound: float
    c1: float
    c2: float
    weight_bound: float
    ratio_audit: float
    initial_window_max: float


@dataclass
class ChaosReport:
    entries: list
    slope: float
    intercept: float
    slope_se: float
    band: tuple = (-1.3, -0.7)
    n_se: float = 2.0
    meta: dict = field(default_factory=dict)

    def decreasing(self) -> list:
        """Per consecutive pair: gap(N_next) < gap(N) with n_se confidence.

        Disorder draws are shared across N, so differences are paired per
        draw and their SE is estimated like the gaps themselves.
        """
        out = []
        for a, b in zip(self.entries, self.entries[1:]):
            d = np.asarray(a.per_draw) - np.asarray(b.per_draw)
            within = np.sqrt(np.asarray(a.per_draw_se) ** 2 + np.asarray(b.per_draw_se) ** 2)
            out.append(bool(d.mean() > self.n_se * nested_se(d, within)))
        return out

    @property
    def strictly_decreasing(self) -> bool:
        return all(self.decreasing())

    @property
    def slope_ok(self) -> bool:
        return self.band[0] <= self.slope <= self.band[1]

    @property
    def bound_ok(self) -> bool:
        return all(e.gap <= e.bound + 3 * e.se for e in self.entries)

    @property
    def initial_window_exact(self) -> bool:
        return all(e.initial_window_max == 0.0 for e in self.entries)

    COLUMNS = ("N", "S", "M", "draws", "replicas", "gap", "se", "bound", "c1", "c2",
               "weight_bound", "ratio_audit")

    def rows(self) -> list:
        return [[e.N, e.S[0] if len(e.S) == 1 else ";".join(f"{s:g}" for s in e.S), e.M, e.draws,
                 e.replicas, e.gap, e.se, e.bound, e.c1, e.c2, e.weight_bound, e.ratio_audit]
                for e in self.entries]

    def to_dict(self) -> dict:
        return {
            "entries": [e.__dict__ for e in self.entries],
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_se": self.slope_se,
            "band": list(self.band),
            "slope_ok": self.slope_ok,
            "decreasing": self.decreasing(),
            "strictly_decreasing": self.strictly_decreasing,
            "bound_ok": self.bound_ok,
            "initial_window_exact": self.initial_window_exact,
            "meta": self.meta,
        }


def nested_se(per_draw, per_draw_se) -> float:
    """SE of the mean over disorder draws of per-draw estimates.

    By the law of total variance the sample variance of the per-draw
    estimates already contains the within-draw Monte Carlo error, so it is
    used alone; with a single draw the within-draw SE is returned.
    """
    per = np.asarray(per_draw, dtype=float)
    D = per.shape[0]
    if D > 1:
        return float(per.std(ddof=1) / math.sqrt(D))
    return float(np.asarray(per_draw_se, dtype=float).reshape(-1)[0])


def fit_slope(N, gap):
    """Least-squares fit log(gap) = intercept + slope log(N), with slope SE."""
    x = np.log(np.asarray(N, dtype=float))
    y = np.log(np.asarray(gap, dtype=float))
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    if x.shape[0] > 2:
        res = y - intercept - slope * x
        se = math.sqrt(float(res @ res) / (x.shape[0] - 2) / sxx)
    else:
        se = math.nan
    return slope, intercept, se


def _pool_map(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(fn, items))


def convergence_study(make_layout: Callable[[int], SpatialLayout],
                      make_model: Callable[[tuple], CoefficientSet], grid: TimeGrid, N_list,
                      run_seed: int, replicas: int = 64, draws: int = 8, M: int | None = None,
                      disorder: DisorderDistribution | None = None, eps: float = 0.0,
                      method: str = "auto", threads: int | None = None, band=(-1.3, -0.7),
                      n_se: float = 2.0, progress=None) -> ChaosReport:
    """Gap between network and limit as a function of N.

    Every (N, draw) pair is an independent coupled run; draw ``d`` uses the
    disorder value ``disorder.sample(run_seed, d)`` and path streams seeded
    by ``subseed(run_seed, d)``, so all N share the draws.  One frozen law
    is built per draw and reused for every N.
    """
    N_list = sorted(int(n) for n in N_list)
    if len(set(N_list)) != len(N_list) or N_list[0] < 1:
        raise ConfigError("study.N: values must be distinct positive integers")
    if replicas < 2:
        raise ConfigError("study.replicas: at least 2 replicas are needed for standard errors")
    if draws < 1:
        raise ConfigError("study.draws: at least one disorder draw is required")
    M = int(M) if M is not None else 8 * N_list[-1]
    disorder = disorder or DisorderDistribution()
    layouts = {N: make_layout(N) for N in N_list}
    cells = layouts[N_list[0]].cells
    if any(lay.cells != cells for lay in layouts.values()):
        raise ConfigError("layout: the cell partition must not depend on N")
    model = make_model(cells)
    omegas = disorder.sample_many(run_seed, np.arange(draws))
    samples = [model.disorder_sample(om) for om in omegas]
    seeds = [subseed(run_seed, d) for d in range(draws)]
    law_layout = layouts[N_list[0]]

    def build_law(d) -> FrozenLaw:
        return simulate_law(law_layout, model, grid, M, samples[d], seeds[d], method=method)

    laws = _pool_map(build_law, list(range(draws)), threads)
    rep = np.arange(replicas)

    def coupled(task):
        N, d = task
        lay = layouts[N]
        net = simulate_network(lay, model, grid, samples[d], seeds[d], replicas=rep, method=method)
        mf = simulate_representatives(laws[d], lay, model, samples[d], seeds[d], replicas=rep, method=method)
        g = coupled_gap(net, mf)
        if progress is not None:
            progress(N, d, g.sup)
        return g.sup, g.sup_se, g.initial_window_max

    tasks = [(N, d) for N in N_list for d in range(draws)]
    results = dict(zip(tasks, _pool_map(coupled, tasks, threads)))

    entries = []
    T = grid.horizon
    for N in N_list:
        lay = layouts[N]
        per = np.array([results[(N, d)][0] for d in range(draws)])
        per_se = np.array([results[(N, d)][1] for d in range(draws)])
        se = nested_se(per, per_se)
        z2 = model.init_law.sup_second_moment()
        c1 = [moment_bound_c1(T, lay.P, z2, s.rates) for s in samples]
        c2 = [continuity_bound_c2(T, lay.P, s.rates, c) for s, c in zip(samples, c1)]
        bound = float(np.mean([theoretical_gap_bound(lay, s.rates, T, eps) for s in samples]))
        entries.append(ChaosEntry(
            N=N, S=[float(s) for s in lay.weights], M=M, draws=draws, replicas=replicas,
            gap=float(per.mean()), se=float(se), per_draw=per.tolist(), per_draw_se=per_se.tolist(),
            bound=bound, c1=float(np.mean(c1)), c2=float(np.mean(c2)),
            weight_bound=lay.weight_bound(), ratio_audit=float(lay.ratio_audit().max()),
            initial_window_max=float(max(results[(N, d)][2] for d in range(draws)))))
    slope, intercept, slope_se = fit_slope([e.N for e in entries], [e.gap for e in entries])
    meta = {"model_id": model.model_id, "run_seed": int(run_seed), "tau": grid.tau, "n": grid.n,
            "T": grid.horizon, "omegas": omegas.tolist()}
    return ChaosReport(entries, slope, intercept, slope_se, tuple(band), n_se, meta)


# --------------------------------------------------------- disorder audit
@dataclass
class IntegrabilityAudit:
    estimate: float
    se: float
    draws: int
    running: np.ndarray
    max_share: float
    divergent: bool


def integrability_exponent(rates: HypothesisRates, P: int, weight_sup: float, T: float) -> float:
    """int_0^T [2L + Lbar (P + 6 w) + K + 3P Kbar] ds."""
    return (2 * rates.L.integral(T) + (P + 6 * weight_sup) * rates.Lbar.integral(T)
            + rates.K.integral(T) + 3 * P * rates.Kbar.integral(T))


def disorder_integrability_audit(rates_fn: Callable[[np.ndarray], HypothesisRates], P: int,
                                 weight_sup: float, T: float, draws,
                                 disorder: DisorderDistribution | None = None,
                                 run_seed: int = 0, share_limit: float = 0.5) -> IntegrabilityAudit:
    """Monte Carlo estimate of E exp(int [...] ds) over disorder draws.

    ``draws`` is a number of draws from ``disorder`` or an explicit array of
    omega' values.  The divergence flag is raised when a value is not
    finite or a single draw carries more than ``share_limit`` of the total,
    the typical symptom of an infinite expectation.
    """
    if np.isscalar(draws):
        disorder = disorder or DisorderDistribution()
        omegas = disorder.sample_many(run_seed, np.arange(int(draws)))
    else:
        omegas = np.asarray(draws, dtype=float)
        omegas = omegas.reshape(omegas.shape[0], -1)
    with np.errstate(over="ignore"):
        expo = np.array([integrability_exponent(rates_fn(om), P, weight_sup, T) for om in omegas])
        vals = np.exp(expo)
    D = vals.shape[0]
    finite = bool(np.all(np.isfinite(vals)))
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(D)) if D > 1 and finite else (0.0 if D == 1 else math.inf)
    running = np.cumsum(vals) / np.arange(1, D + 1)
    share = float(vals.max() / vals.sum()) if finite and vals.sum() > 0 else 1.0
    divergent = (not finite) or (D > 1 and share > share_limit)
    return IntegrabilityAudit(est, se, D, running, share, divergent)
