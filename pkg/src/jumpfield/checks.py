"""Numerical audits of the monotonicity and growth hypotheses on random samples.

Each condition is written lhs <= rhs.  A sample's normalised violation is
(lhs - rhs) / (1 + |rhs|); a report is satisfied when the largest one is at
most ``VERDICT_TOL``.  Jump second moments come from the model's closed forms
when it supplies them and from a Monte Carlo estimate over marks otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet, DisorderDistribution, SddeCoefficients
from .core import Sites, SpatialLayout, delay_integral_batch, homogeneous_layout

VERDICT_TOL = 1e-12
MC_MARKS = 256


@dataclass
class ConditionResult:
    name: str
    max_violation: float
    worst: dict
    trials: int
    mc_se: float = 0.0

    @property
    def ok(self) -> bool:
        return self.max_violation <= VERDICT_TOL


@dataclass
class HypothesisReport:
    model_id: str
    kind: str
    conditions: list = field(default_factory=list)

    @property
    def max_violation(self) -> float:
        return max(c.max_violation for c in self.conditions)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.conditions)

    @property
    def worst(self) -> dict:
        return max(self.conditions, key=lambda c: c.max_violation).worst

    def rows(self):
        return [(c.name, c.max_violation, c.mc_se, c.trials, c.ok) for c in self.conditions]


@dataclass
class HypothesisSampler:
    """Random (t, x, y, segments, sites, omega') draws for the audits.

    State magnitudes are log-uniform in [10**lo, 10**hi]; a third of the pairs
    are small perturbations of each other, one sixth coincide exactly.
    """

    d: int
    n: int = 8
    tau: float = 1.0
    horizon: float = 1.0
    sites: Sites | None = None
    disorder: DisorderDistribution | None = None
    omega_draws: int = 8
    log_scale: tuple = (-2.0, 1.5)
    seed: int = 0

    def __post_init__(self):
        if self.sites is None:
            self.sites = homogeneous_layout(1).midpoint_sites()

    def _mag(self, rng, shape):
        lo, hi = self.log_scale
        return 10.0 ** rng.uniform(lo, hi, size=shape)

    def draw(self, trials: int):
        rng = np.random.default_rng(self.seed)
        K = int(trials)
        d, n = self.d, self.n
        x = rng.standard_normal((K, d)) * self._mag(rng, (K, 1))
        seg = rng.standard_normal((K, n + 1, d)) * self._mag(rng, (K, 1, 1))
        seg[:, -1] = x
        kind = rng.integers(0, 6, size=K)
        eps = self._mag(rng, (K, 1, 1)) * 1e-3
        seg2 = np.where((kind < 2)[:, None, None], seg + eps * rng.standard_normal(seg.shape),
                        rng.standard_normal(seg.shape) * self._mag(rng, (K, 1, 1)))
        seg2 = np.where((kind == 5)[:, None, None], seg, seg2)
        x2 = seg2[:, -1].copy()
        t = rng.uniform(0.0, self.horizon, size=K)
        ns = len(self.sites)
        s = self.sites.take(rng.integers(0, ns, size=K))
        s2 = self.sites.take(rng.integers(0, ns, size=K))
        if self.disorder is None or self.disorder.kind == "none":
            oms = np.zeros((1, 1))
        else:
            oms = self.disorder.sample_many(self.seed, self.omega_draws)
        group = np.arange(K) % oms.shape[0]
        return dict(t=t, x=x, x2=x2, seg=seg, seg2=seg2, s=s, s2=s2, oms=oms, group=group,
                    rng=np.random.default_rng(self.seed + 1))


def _sq(a):
    a = a.reshape(a.shape[0], -1)
    return np.einsum("ki,ki->k", a, a)


def _mc_moment(fn, K, nu, sampler, rng):
    """nu * E|fn(xi)|^2 with its standard error, by sampling marks."""
    if nu <= 0:
        return np.zeros(K), 0.0
    acc = np.zeros((MC_MARKS, K))
    for i in range(MC_MARKS):
        xi = sampler(rng.random(K))
        acc[i] = _sq(fn(xi))
    est = nu * acc.mean(axis=0)
    se = nu * acc.std(axis=0, ddof=1) / np.sqrt(MC_MARKS)
    return est, float(np.max(se)) if K else 0.0


def _result(name, lhs, rhs, ctx, mc_se=0.0):
    v = (lhs - rhs) / (1.0 + np.abs(rhs))
    v = np.where(np.isfinite(v), v, np.inf)
    i = int(np.argmax(v))
    worst = {"lhs": float(lhs[i]), "rhs": float(rhs[i])}
    worst.update({k: (np.asarray(a)[i].tolist()) for k, a in ctx.items()})
    return ConditionResult(name, float(v[i]), worst, int(lhs.shape[0]), mc_se)


def _per_omega(coeffs, S, fn):
    """Evaluate ``fn(idx, om)`` on each disorder group and scatter the results."""
    out = {}
    for gi in range(S["oms"].shape[0]):
        idx = np.flatnonzero(S["group"] == gi)
        om = S["oms"][gi]
        parts = fn(idx, om)
        for key, val in parts.items():
            if key not in out:
                shape = (S["t"].shape[0],) + np.shape(val)[1:]
                out[key] = np.zeros(shape)
            out[key][idx] = val
    return out


def _lam_integral(coeffs, sampler: HypothesisSampler, seg):
    lam = coeffs.delay_measure(sampler.tau)
    idx = lam.grid_indices(sampler.tau, sampler.n)
    return delay_integral_batch(seg, idx, np.asarray(lam.weights))


# ---------------------------------------------------------- network form
def _local_terms(c: CoefficientSet, t, s, x, om, rng, x2=None):
    f = c.f(t, s, x, om)
    g = c.g(t, s, x, om)
    if x2 is None:
        hm = c.h_sq_moment(t, s, x, om)
        se = 0.0
        if hm is None:
            hm, se = _mc_moment(lambda xi: c.h(t, s, x, om, xi), x.shape[0], c.nu_total, c.mark_sampler, rng)
        return f, g, hm, se
    f2 = c.f(t, s, x2, om)
    g2 = c.g(t, s, x2, om)
    hm = c.h_diff_sq_moment(t, s, x, x2, om)
    se = 0.0
    if hm is None:
        hm, se = _mc_moment(lambda xi: c.h(t, s, x, om, xi) - c.h(t, s, x2, om, xi),
                            x.shape[0], c.nu_total, c.mark_sampler, rng)
    return f - f2, g - g2, hm, se


def _inter_terms(c: CoefficientSet, t, s, s2, x, seg, om, rng, x2=None, seg2=None):
    th = c.theta(t, s, s2, x, seg, om)
    be = c.beta(t, s, s2, x, seg, om)
    if x2 is None:
        em = c.eta_sq_moment(t, s, s2, x, seg, om)
        se = 0.0
        if em is None:
            em, se = _mc_moment(lambda xi: c.eta(t, s, s2, x, seg, om, xi), x.shape[0], c.nu_total,
                                c.mark_sampler, rng)
        return _sq(th) + _sq(be) + em, se
    th2 = c.theta(t, s, s2, x2, seg2, om)
    be2 = c.beta(t, s, s2, x2, seg2, om)
    em = c.eta_diff_sq_moment(t, s, s2, x, seg, x2, seg2, om)
    se = 0.0
    if em is None:
        em, se = _mc_moment(lambda xi: c.eta(t, s, s2, x, seg, om, xi) - c.eta(t, s, s2, x2, seg2, om, xi),
                            x.shape[0], c.nu_total, c.mark_sampler, rng)
    return _sq(th - th2) + _sq(be - be2) + em, se


def _network_monotonicity(c: CoefficientSet, sampler, trials):
    S = sampler.draw(trials)
    rng = S["rng"]
    ses = [0.0, 0.0]

    def fn(idx, om):
        t, x, x2 = S["t"][idx], S["x"][idx], S["x2"][idx]
        s, s2 = S["s"].take(idx), S["s2"].take(idx)
        seg, seg2 = S["seg"][idx], S["seg2"][idx]
        r = c.rates(om)
        df, dg, dh, se1 = _local_terms(c, t, s, x, om, rng, x2)
        dx = x - x2
        lhs1 = 2.0 * np.einsum("kd,kd->k", dx, df) + _sq(dg) + dh
        rhs1 = r.L(t) * _sq(dx)
        lhs3, se3 = _inter_terms(c, t, s, s2, x, seg, om, rng, x2, seg2)
        rhs3 = r.Lbar(t) * (_sq(dx) + _lam_integral(c, sampler, seg - seg2))
        ses[0], ses[1] = max(ses[0], se1), max(ses[1], se3)
        return {"l1": lhs1, "r1": rhs1, "l3": lhs3, "r3": rhs3,
                "om": np.repeat(np.asarray(om)[None, :1], len(idx), axis=0)}

    out = _per_omega(c, S, fn)
    ctx = {"t": S["t"], "x": S["x"], "y": S["x2"], "omega": out["om"][:, 0]}
    return [_result("local monotonicity", out["l1"], out["r1"], ctx, ses[0]),
            _result("interaction Lipschitz", out["l3"], out["r3"], ctx, ses[1])]


def _network_growth(c: CoefficientSet, sampler, trials):
    S = sampler.draw(trials)
    rng = S["rng"]
    ses = [0.0, 0.0, 0.0]

    def fn(idx, om):
        t, x = S["t"][idx], S["x"][idx]
        s, s2 = S["s"].take(idx), S["s2"].take(idx)
        seg = S["seg"][idx]
        r = c.rates(om)
        f, g, hm, se1 = _local_terms(c, t, s, x, om, rng)
        xx = _sq(x)
        lhs2 = 2.0 * np.einsum("kd,kd->k", x, f) + _sq(g) + hm
        rhs2 = r.K(t) * (1.0 + xx)
        R = np.sqrt(xx)
        lhs6 = np.sqrt(_sq(f)) + _sq(g) + hm
        rhs6 = np.array([c.k_tilde(float(Ri), om) for Ri in R])
        lhs4, se4 = _inter_terms(c, t, s, s2, x, seg, om, rng)
        rhs4 = r.Kbar(t) * (1.0 + xx + _lam_integral(c, sampler, seg))
        ses[0], ses[1], ses[2] = max(ses[0], se1), max(ses[1], se1), max(ses[2], se4)
        return {"l2": lhs2, "r2": rhs2, "l6": lhs6, "r6": rhs6, "l4": lhs4, "r4": rhs4,
                "om": np.repeat(np.asarray(om)[None, :1], len(idx), axis=0)}

    out = _per_omega(c, S, fn)
    ctx = {"t": S["t"], "x": S["x"], "omega": out["om"][:, 0]}
    return [_result("local growth", out["l2"], out["r2"], ctx, ses[0]),
            _result("local boundedness", out["l6"], out["r6"], ctx, ses[1]),
            _result("interaction growth", out["l4"], out["r4"], ctx, ses[2])]


# ------------------------------------------------------------- SDDE form
def _sdde_jump_moment(c: SddeCoefficients, t, seg, om, rng, seg2=None):
    if seg2 is None:
        hm = c.h_sq_moment(t, seg, om)
        if hm is None:
            return _mc_moment(lambda xi: c.h(t, seg, om, xi), seg.shape[0], c.nu_total, c.mark_sampler, rng)
        return hm, 0.0
    hm = c.h_diff_sq_moment(t, seg, seg2, om)
    if hm is None:
        return _mc_moment(lambda xi: c.h(t, seg, om, xi) - c.h(t, seg2, om, xi), seg.shape[0],
                          c.nu_total, c.mark_sampler, rng)
    return hm, 0.0


def _sdde_monotonicity(c: SddeCoefficients, sampler, trials):
    S = sampler.draw(trials)
    rng = S["rng"]
    se = [0.0]

    def fn(idx, om):
        t, seg, seg2 = S["t"][idx], S["seg"][idx], S["seg2"][idx]
        d0 = seg[:, -1] - seg2[:, -1]
        df = c.f(t, seg, om) - c.f(t, seg2, om)
        dg = c.g(t, seg, om) - c.g(t, seg2, om)
        dh, s1 = _sdde_jump_moment(c, t, seg, om, rng, seg2)
        se[0] = max(se[0], s1)
        lhs = 2.0 * np.einsum("kd,kd->k", d0, df) + _sq(dg) + dh
        R = np.maximum(np.abs(seg).max(axis=(1, 2)), np.abs(seg2).max(axis=(1, 2)))
        L = np.array([c.lipschitz_R(float(Ri), om) for Ri in R])
        rhs = L * _lam_integral(c, sampler, seg - seg2)
        return {"l": lhs, "r": rhs, "om": np.repeat(np.asarray(om)[None, :1], len(idx), axis=0)}

    out = _per_omega(c, S, fn)
    ctx = {"t": S["t"], "x": S["x"], "y": S["x2"], "omega": out["om"][:, 0]}
    return [_result("segment monotonicity", out["l"], out["r"], ctx, se[0])]


def _sdde_growth(c: SddeCoefficients, sampler, trials):
    S = sampler.draw(trials)
    rng = S["rng"]
    se = [0.0]

    def fn(idx, om):
        t, seg = S["t"][idx], S["seg"][idx]
        x0 = seg[:, -1]
        f = c.f(t, seg, om)
        g = c.g(t, seg, om)
        hm, s1 = _sdde_jump_moment(c, t, seg, om, rng)
        se[0] = max(se[0], s1)
        r = c.rates(om)
        lhs2 = 2.0 * np.einsum("kd,kd->k", x0, f) + _sq(g) + hm
        rhs2 = r.K(t) * (1.0 + _lam_integral(c, sampler, seg))
        R = np.sqrt(np.einsum("kjd,kjd->kj", seg, seg).max(axis=1))
        lhs4 = np.sqrt(_sq(f)) + _sq(g) + hm
        rhs4 = np.array([c.k_tilde(float(Ri), om) for Ri in R])
        return {"l2": lhs2, "r2": rhs2, "l4": lhs4, "r4": rhs4,
                "om": np.repeat(np.asarray(om)[None, :1], len(idx), axis=0)}

    out = _per_omega(c, S, fn)
    ctx = {"t": S["t"], "x": S["x"], "omega": out["om"][:, 0]}
    return [_result("segment growth", out["l2"], out["r2"], ctx, se[0]),
            _result("segment boundedness", out["l4"], out["r4"], ctx, se[0])]


# ----------------------------------------------------------------- API
def default_sampler(coeffs, layout: SpatialLayout | None = None,
                    disorder: DisorderDistribution | None = None, seed: int = 0,
                    tau: float = 1.0, n: int = 8, horizon: float = 1.0) -> HypothesisSampler:
    sites = layout.sites() if layout is not None and layout.N else None
    return HypothesisSampler(coeffs.d, n=n, tau=tau, horizon=horizon, sites=sites,
                             disorder=disorder, seed=seed)


def check_monotonicity(coeffs, sampler: HypothesisSampler | None = None, trials: int = 10_000) -> HypothesisReport:
    """Audit the one-sided Lipschitz conditions with the model's declared L, Lbar."""
    sampler = sampler or default_sampler(coeffs)
    if isinstance(coeffs, SddeCoefficients):
        return HypothesisReport(coeffs.model_id, "monotonicity", _sdde_monotonicity(coeffs, sampler, trials))
    return HypothesisReport(coeffs.model_id, "monotonicity", _network_monotonicity(coeffs, sampler, trials))


def check_growth(coeffs, sampler: HypothesisSampler | None = None, trials: int = 10_000) -> HypothesisReport:
    """Audit the growth and local boundedness conditions with declared K, Kbar, K~."""
    sampler = sampler or default_sampler(coeffs)
    if isinstance(coeffs, SddeCoefficients):
        return HypothesisReport(coeffs.model_id, "growth", _sdde_growth(coeffs, sampler, trials))
    return HypothesisReport(coeffs.model_id, "growth", _network_growth(coeffs, sampler, trials))
