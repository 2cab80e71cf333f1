"""Compiled-in models: FitzHugh-Nagumo network, linear oracle and test models."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .coefficients import CoefficientSet, SddeCoefficients
from .core import (Cell, ConfigError, DelayMeasure, GaussianInitialLaw, HypothesisRates,
                   Sites)


# ------------------------------------------------------------------ FHN
@dataclass(frozen=True)
class FhnParameters:
    """FitzHugh-Nagumo parameters.

    ``lambda1`` .. ``lambda5`` are scalars or per-cell sequences; ``A1``,
    ``A2`` and ``eta0`` are scalars or (C, C) cell-pair matrices.  Marks are
    Exp(1) so the conductance jump is eta0 * xi with nu-integral
    ``nu_total * eta0`` and second moment ``2 * nu_total * eta0**2``.
    ``lambda1_spread`` adds ``spread * u(r)`` to lambda1, where u(r) in
    [-1/2, 1/2) is the position inside the cell, and ``disorder_scale``
    shifts lambda1 by ``disorder_scale * omega'[0]``.
    """

    lambda1: object = 0.5
    lambda2: object = 0.5
    lambda3: object = 0.08
    lambda4: object = 0.7
    lambda5: object = 0.8
    A1: object = 1.0
    A2: object = 0.5
    eta0: object = 0.2
    nu_total: float = 1.0
    lambda1_spread: float = 0.0
    disorder_scale: float = 0.1
    init_mean: tuple = (1.0, 0.0)
    init_sd: tuple = (0.5, 0.1)

    def __post_init__(self):
        for name in ("lambda3", "lambda4", "lambda5"):
            if np.any(np.asarray(getattr(self, name), dtype=float) <= 0):
                raise ConfigError(f"model.{name} must be > 0")
        if not self.nu_total >= 0:
            raise ConfigError("model.nu_total must be >= 0")
        if not self.lambda1_spread >= 0:
            raise ConfigError("model.lambda1_spread must be >= 0")

    def per_cell(self, name: str, C: int) -> np.ndarray:
        v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
        if v.size == 1:
            return np.full(C, v[0])
        if v.size != C:
            raise ConfigError(f"model.{name} must be a scalar or have one entry per cell ({C})")
        return v

    def per_pair(self, name: str, C: int) -> np.ndarray:
        v = np.asarray(getattr(self, name), dtype=float)
        if v.size == 1:
            return np.full((C, C), float(v.reshape(-1)[0]))
        if v.shape != (C, C):
            raise ConfigError(f"model.{name} must be a scalar or a {C}x{C} matrix")
        return v


class FhnModel(CoefficientSet):
    """FitzHugh-Nagumo neurons with electrical synapses and jump conductances.

    State x = (V, w).  The interaction from r' on r is
    theta = -A1 (V^r - V^{r'}_{t-tau}) e_V, with A2 on dB^{r,alpha} and
    eta0 * xi on the compensated jumps of N^{r,alpha}.  Used unchanged by
    the network engine (finite sums) and the mean-field engine (copy averages).
    """

    model_id = "fhn"
    d = 2
    m = 1
    n_b = 1
    local_jumps = False
    separable = True
    disorder_dim = 1

    def __init__(self, params: FhnParameters | None = None, cells=None):
        self.params = params or FhnParameters()
        cells = tuple(cells) if cells is not None else (Cell(0, (0.0,), (1.0,), 1.0),)
        p = self.params
        C = len(cells)
        self.cells = cells
        self.lam = np.stack([p.per_cell(f"lambda{i}", C) for i in range(1, 6)])
        self.A1 = p.per_pair("A1", C)
        self.A2 = p.per_pair("A2", C)
        self.eta0 = p.per_pair("eta0", C)
        self.nu_total = float(p.nu_total)
        self.mark_weight_integral = self.nu_total  # nu * E[xi]
        self.mark_sq_integral = 2.0 * self.nu_total  # nu * E[xi^2]
        self.has_interaction = bool(np.any(self.A1) or np.any(self.A2)
                                    or (self.nu_total > 0 and np.any(self.eta0)))
        self.cell_lo = np.array([c.lo[0] for c in cells])
        self.cell_hi = np.array([c.hi[0] for c in cells])
        super().__init__(GaussianInitialLaw(np.array([p.init_mean]), np.array([p.init_sd])),
                         None)

    def mark_sampler(self, u):
        return -np.log1p(-u)

    def mark_weight(self, xi):
        return xi

    # local ---------------------------------------------------------------
    def lambda1(self, s: Sites, om) -> np.ndarray:
        p = self.params
        lam1 = self.lam[0][s.cell] + p.disorder_scale * float(np.asarray(om).reshape(-1)[0])
        if p.lambda1_spread:
            lo, hi = self.cell_lo[s.cell], self.cell_hi[s.cell]
            lam1 = lam1 + p.lambda1_spread * ((s.pos[:, 0] - lo) / (hi - lo) - 0.5)
        return lam1

    def f(self, t, s, x, om):
        V, w = x[:, 0], x[:, 1]
        l3, l4, l5 = self.lam[2][s.cell], self.lam[3][s.cell], self.lam[4][s.cell]
        out = np.empty_like(x)
        out[:, 0] = -V ** 3 / 3.0 + V - w + self.lambda1(s, om)
        out[:, 1] = l3 * (V + l4 - l5 * w)
        return out

    def g(self, t, s, x, om):
        out = np.zeros((x.shape[0], 2, 1))
        out[:, 0, 0] = self.lam[1][s.cell]
        return out

    def h_sq_moment(self, t, s, x, om):
        return np.zeros(x.shape[0])

    def h_diff_sq_moment(self, t, s, x, x2, om):
        return np.zeros(x.shape[0])

    # interaction -------------------------------------------------------
    def _gap(self, x, seg):
        return x[:, 0] - seg[:, 0, 0]

    def _eV(self, v):
        out = np.zeros((v.shape[0], 2))
        out[:, 0] = v
        return out

    def theta(self, t, s, s2, x, seg, om):
        return self._eV(-self.A1[s.cell, s2.cell] * self._gap(x, seg))

    def beta(self, t, s, s2, x, seg, om):
        return self._eV(-self.A2[s.cell, s2.cell] * self._gap(x, seg))[:, :, None]

    def eta(self, t, s, s2, x, seg, om, xi):
        return self._eV(-self.eta0[s.cell, s2.cell] * xi * self._gap(x, seg))

    def eta_compensator(self, t, s, s2, x, seg, om):
        return self._eV(-self.mark_weight_integral * self.eta0[s.cell, s2.cell] * self._gap(x, seg))

    def eta_sq_moment(self, t, s, s2, x, seg, om):
        return self.mark_sq_integral * (self.eta0[s.cell, s2.cell] * self._gap(x, seg)) ** 2

    def eta_diff_sq_moment(self, t, s, s2, x, seg, x2, seg2, om):
        e = self.eta0[s.cell, s2.cell]
        return self.mark_sq_integral * (e * (self._gap(x, seg) - self._gap(x2, seg2))) ** 2

    def features(self, t, s_src, seg, om):
        return seg[:, 0, 0:1]

    def apply_features(self, t, s, x, agg, wsum, cell_pop, P, om):
        # per-cell electrical gap: wsum_c * V^r - agg_c
        T = wsum * x[:, 0:1] - agg[:, :, 0]
        K = x.shape[0]
        drift = np.zeros((K, 2))
        drift[:, 0] = -np.sum(self.A1[s.cell] * T, axis=1)
        beta = np.zeros((K, P, 2, 1))
        eta_lin = np.zeros((K, P, 2))
        b_cell = self.A2[s.cell] * T
        e_cell = self.eta0[s.cell] * T
        for alpha in range(P):
            sel = cell_pop == alpha
            beta[:, alpha, 0, 0] = -np.sum(b_cell[:, sel], axis=1)
            eta_lin[:, alpha, 0] = -np.sum(e_cell[:, sel], axis=1)
        return drift, beta, eta_lin

    # declared constants ---------------------------------------------------
    def _lambda1_sup(self, om) -> float:
        p = self.params
        shift = p.disorder_scale * float(np.asarray(om).reshape(-1)[0])
        return float(np.max(np.abs(self.lam[0] + shift)) + 0.5 * p.lambda1_spread)

    def rates(self, om) -> HypothesisRates:
        l2, l3, l4, l5 = (self.lam[i] for i in range(1, 5))
        lam1 = self._lambda1_sup(om)
        # one-sided Lipschitz constant: the cubic only helps, the rest is the
        # quadratic form [[2, l3-1], [l3-1, -2 l3 l5]]
        L = max(float(np.max(np.linalg.eigvalsh(np.array([[2.0, a - 1.0], [a - 1.0, -2.0 * a * b]]))))
                for a, b in zip(l3, l5))
        K = float(np.max(np.maximum.reduce([
            l2 ** 2 + lam1 + np.abs(l3 * l4),
            2.0 + np.abs(l3 - 1.0) + lam1,
            np.abs(l3 - 1.0) + np.abs(l3 * l4) - 2.0 * l3 * l5,
        ])))
        c = float(np.max(self.A1 ** 2 + self.A2 ** 2 + self.eta0 ** 2 * self.mark_sq_integral))
        return HypothesisRates.constant(K=K, L=max(L, 0.0), Kbar=2.0 * c, Lbar=2.0 * c)

    def k_tilde(self, R, om):
        l2, l3, l4, l5 = (self.lam[i] for i in range(1, 5))
        lam1 = self._lambda1_sup(om)
        return float(np.max(R ** 3 / 3.0 + 2.0 * R + lam1 + l3 * ((1.0 + l5) * R + np.abs(l4)) + l2 ** 2))

    def describe(self):
        out = super().describe()
        out.update({k.name: _plain(getattr(self.params, k.name)) for k in fields(self.params)})
        return out


def fhn_network_coefficients(params: FhnParameters | None = None, cells=None) -> FhnModel:
    """FHN coefficient set for the finite network."""
    return FhnModel(params, cells)


def fhn_meanfield_coefficients(params: FhnParameters | None = None, cells=None) -> FhnModel:
    """FHN coefficient set for the mean-field engine.

    The functionals are the same as for the network; the mean-field engine
    evaluates them against copy segments and integrates over cells.
    """
    return FhnModel(params, cells)


# --------------------------------------------------------------- linear
@dataclass(frozen=True)
class LinearParameters:
    a: float = 1.0
    b_delay: float = 0.0
    sigma: float = 1.0
    c_jump: float = 1.0
    nu_total: float = 2.0
    x0: float = 1.0
    x0_sd: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError("model.a must be > 0")
        if not self.nu_total >= 0:
            raise ConfigError("model.nu_total must be >= 0")
        if not self.x0_sd >= 0:
            raise ConfigError("model.x0_sd must be >= 0")


class LinearSdde(SddeCoefficients):
    """dX = (-a X + b X_{t-tau}) dt + sigma dW + int c dÑ as a single SDDE.

    The growth and monotonicity constants are declared against the delay
    measure (delta_0 + delta_{-tau}) / 2.
    """

    model_id = "linear"
    d = 1
    m = 1

    def __init__(self, p: LinearParameters):
        self.p = p
        self.nu_total = float(p.nu_total)
        super().__init__(GaussianInitialLaw([[p.x0]], [[p.x0_sd]]))

    def delay_measure(self, tau):
        return DelayMeasure((0.0, -tau), (0.5, 0.5))

    def f(self, t, seg, om):
        return -self.p.a * seg[:, -1] + self.p.b_delay * seg[:, 0]

    def g(self, t, seg, om):
        return np.full((seg.shape[0], 1, 1), self.p.sigma)

    def h(self, t, seg, om, xi):
        return np.full((seg.shape[0], 1), self.p.c_jump)

    def h_compensator(self, t, seg, om):
        return np.full((seg.shape[0], 1), self.p.c_jump * self.nu_total)

    def h_sq_moment(self, t, seg, om):
        return np.full(seg.shape[0], self.p.c_jump ** 2 * self.nu_total)

    def h_diff_sq_moment(self, t, seg, seg2, om):
        return np.zeros(seg.shape[0])

    def rates(self, om):
        p = self.p
        b = abs(p.b_delay)
        K = max(p.sigma ** 2 + p.c_jump ** 2 * p.nu_total, 2.0 * (b - 2.0 * p.a), 2.0 * b)
        return HypothesisRates.constant(K=K, L=2.0 * b)

    def k_tilde(self, R, om):
        p = self.p
        return (p.a + abs(p.b_delay)) * R + p.sigma ** 2 + p.c_jump ** 2 * p.nu_total


class LinearNetwork(CoefficientSet):
    """Linear model in network form: local -aX, sigma, c; interaction b * y(-tau)."""

    model_id = "linear"
    d = 1
    m = 1
    n_b = 1
    separable = True

    def __init__(self, p: LinearParameters):
        self.p = p
        self.nu_total = float(p.nu_total)
        self.has_interaction = p.b_delay != 0
        super().__init__(GaussianInitialLaw([[p.x0]], [[p.x0_sd]]))

    def f(self, t, s, x, om):
        return -self.p.a * x

    def g(self, t, s, x, om):
        return np.full(x.shape + (1,), self.p.sigma)

    def h(self, t, s, x, om, xi):
        return np.full_like(x, self.p.c_jump)

    def h_compensator(self, t, s, x, om):
        return np.full_like(x, self.p.c_jump * self.nu_total)

    def h_sq_moment(self, t, s, x, om):
        return np.full(x.shape[0], self.p.c_jump ** 2 * self.nu_total)

    def h_diff_sq_moment(self, t, s, x, x2, om):
        return np.zeros(x.shape[0])

    def theta(self, t, s, s2, x, seg, om):
        return self.p.b_delay * seg[:, 0]

    def features(self, t, s_src, seg, om):
        return seg[:, 0, :]

    def apply_features(self, t, s, x, agg, wsum, cell_pop, P, om):
        K = x.shape[0]
        return (self.p.b_delay * agg.sum(axis=1), np.zeros((K, P, 1, 1)), np.zeros((K, P, 1)))

    def mark_weight(self, xi):
        return np.zeros_like(xi)

    def rates(self, om):
        p = self.p
        b2 = p.b_delay ** 2
        return HypothesisRates.constant(K=p.sigma ** 2 + p.c_jump ** 2 * p.nu_total, L=0.0,
                                        Kbar=b2, Lbar=b2)

    def k_tilde(self, R, om):
        p = self.p
        return p.a * R + p.sigma ** 2 + p.c_jump ** 2 * p.nu_total


def delay_ode_mean(a: float, b: float, x0: float, tau: float, times: np.ndarray,
                   rtol: float = 1e-11, atol: float = 1e-13) -> np.ndarray:
    """Solve m' = -a m + b m(t - tau), m = x0 on [-tau, 0], by the method of steps."""
    from scipy.integrate import solve_ivp

    times = np.asarray(times, dtype=float)
    out = np.full(times.shape, float(x0))
    T = float(times.max()) if times.size else 0.0
    if T <= 0:
        return out
    if b == 0:
        pos = times > 0
        out[pos] = x0 * np.exp(-a * times[pos])
        return out
    pieces = []  # dense solutions on consecutive delay windows

    def piece(t):
        return pieces[min(int(t // tau), len(pieces) - 1)]

    def past(t):
        return x0 if t <= 0 else float(piece(t).sol(t)[0])

    start, m0 = 0.0, float(x0)
    while start < T:
        end = min(start + tau, T)
        sol = solve_ivp(lambda t, m: -a * m + b * past(t - tau), (start, end), [m0],
                        method="DOP853", rtol=rtol, atol=atol, dense_output=True)
        pieces.append(sol)
        m0 = float(sol.y[0, -1])
        start = end
    for i, t in enumerate(times):
        if t > 0:
            out[i] = float(piece(t).sol(t)[0])
    return out


def delay_ode_mean_euler(a: float, b: float, x0: float, tau: float, n: int, steps: int) -> np.ndarray:
    """Explicit Euler for the mean delay ODE on the simulation grid (values at t_0..t_steps)."""
    dt = tau / n
    m = np.full(n + 1 + steps, float(x0))
    for k in range(steps):
        m[n + k + 1] = m[n + k] + dt * (-a * m[n + k] + b * m[k])
    return m[n:]


@dataclass
class LinearOracle:
    """Linear model with its SDDE form, network form and closed-form moments."""

    params: LinearParameters
    sdde: LinearSdde = field(init=False)
    network: LinearNetwork = field(init=False)

    def __post_init__(self):
        self.sdde = LinearSdde(self.params)
        self.network = LinearNetwork(self.params)

    def mean(self, t, tau: float = 1.0) -> np.ndarray:
        p = self.params
        return delay_ode_mean(p.a, p.b_delay, p.x0, tau, np.atleast_1d(t))

    def variance(self, t) -> np.ndarray:
        """Exact Var X_t for b_delay = 0."""
        p = self.params
        if p.b_delay != 0:
            raise ValueError("closed-form variance requires b_delay = 0")
        t = np.asarray(t, dtype=float)
        q = p.sigma ** 2 + p.c_jump ** 2 * p.nu_total
        e = np.exp(-2.0 * p.a * np.maximum(t, 0.0))
        return q * (1.0 - e) / (2.0 * p.a) + p.x0_sd ** 2 * e

    def stationary_variance(self) -> float:
        p = self.params
        return (p.sigma ** 2 + p.c_jump ** 2 * p.nu_total) / (2.0 * p.a)


def linear_oracle_model(a=1.0, b_delay=0.0, sigma=1.0, c_jump=1.0, nu_total=2.0,
                        x0=1.0, x0_sd=0.0) -> LinearOracle:
    return LinearOracle(LinearParameters(a, b_delay, sigma, c_jump, nu_total, x0, x0_sd))


# ------------------------------------------------------------ test models
class ZeroModel(CoefficientSet):
    """All coefficients vanish."""

    model_id = "zero"

    def __init__(self, d: int = 1, x0: float = 0.0, x0_sd: float = 0.0):
        self.d = int(d)
        super().__init__(GaussianInitialLaw(np.full((1, self.d), x0), np.full((1, self.d), x0_sd)))


class ElectricalCoupling(CoefficientSet):
    """theta = k (y(0-) - x) with no local dynamics and no noise."""

    model_id = "electrical"
    d = 1
    separable = True

    def __init__(self, k: float = 1.0, x0: float = 1.0, x0_sd: float = 0.0):
        self.k = float(k)
        self.has_interaction = self.k != 0
        super().__init__(GaussianInitialLaw([[x0]], [[x0_sd]]), DelayMeasure.dirac(0.0))

    def delay_measure(self, tau):
        return DelayMeasure.dirac(0.0)

    def theta(self, t, s, s2, x, seg, om):
        return self.k * (seg[:, -1] - x)

    def features(self, t, s_src, seg, om):
        return seg[:, -1, :]

    def apply_features(self, t, s, x, agg, wsum, cell_pop, P, om):
        K = x.shape[0]
        drift = self.k * (agg.sum(axis=1) - wsum.sum(axis=1)[:, None] * x)
        return drift, np.zeros((K, P, 1, 1)), np.zeros((K, P, 1))

    def mark_weight(self, xi):
        return np.zeros_like(xi)

    def rates(self, om):
        return HypothesisRates.constant(Kbar=2 * self.k ** 2, Lbar=2 * self.k ** 2)


class Counterexample(CoefficientSet):
    """f(x) = x^2 with the (false) claim L = K = 0; checkers must flag it."""

    model_id = "counterexample"
    d = 1

    def __init__(self):
        super().__init__(GaussianInitialLaw([[0.0]], [[0.0]]))

    def f(self, t, s, x, om):
        return x ** 2

    def rates(self, om):
        return HypothesisRates.constant()

    def k_tilde(self, R, om):
        return 0.0


# -------------------------------------------------------------- registry
def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    return v


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    summary: str
    defaults: dict
    build: Callable


def _build_fhn(params: dict, cells):
    return FhnModel(FhnParameters(**params), cells)


def _build_linear(params: dict, cells):
    return LinearNetwork(LinearParameters(**params))


def _build_zero(params: dict, cells):
    return ZeroModel(**params)


def _build_electrical(params: dict, cells):
    return ElectricalCoupling(**params)


def _build_counterexample(params: dict, cells):
    return Counterexample(**params)


def _defaults(cls) -> dict:
    return {f.name: _plain(f.default) for f in fields(cls)}


MODELS = {
    "fhn": ModelEntry("fhn", "FitzHugh-Nagumo network, electrical synapses, jump conductances (d=2)",
                      _defaults(FhnParameters), _build_fhn),
    "linear": ModelEntry("linear", "linear delay jump-diffusion with closed-form moments (d=1)",
                         _defaults(LinearParameters), _build_linear),
    "zero": ModelEntry("zero", "all coefficients zero", {"d": 1, "x0": 0.0, "x0_sd": 0.0}, _build_zero),
    "electrical": ModelEntry("electrical", "pure electrical coupling theta = k (y(0-) - x)",
                             {"k": 1.0, "x0": 1.0, "x0_sd": 0.0}, _build_electrical),
    "counterexample": ModelEntry("counterexample", "f = x^2 with false constants L = K = 0", {},
                                 _build_counterexample),
}


def build_model(model_id: str, params: dict | None = None, cells=None) -> CoefficientSet:
    if model_id not in MODELS:
        raise ConfigError(f"model.id: unknown model {model_id!r} (known: {', '.join(MODELS)})")
    entry = MODELS[model_id]
    params = dict(params or {})
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ConfigError(f"model.{sorted(unknown)[0]}: unknown parameter for model {model_id!r}")
    return entry.build(params, cells)


def build_sdde(model_id: str, params: dict | None = None, cells=None) -> SddeCoefficients:
    """Single-path form of a model; network models use their local dynamics."""
    from .coefficients import LocalSdde

    if model_id == "linear":
        return LinearSdde(LinearParameters(**(params or {})))
    model = build_model(model_id, params, cells)
    cell = (cells or (Cell(0, (0.0,), (1.0,), 1.0),))[0]
    site = Sites(np.atleast_2d(cell.midpoint), np.zeros(1, np.int64), np.zeros(1, np.int64))
    return LocalSdde(model, site)


def catalogue() -> list[dict]:
    return [{"id": e.model_id, "summary": e.summary, "defaults": e.defaults} for e in MODELS.values()]
