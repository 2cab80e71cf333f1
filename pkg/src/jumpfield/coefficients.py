"""Coefficient sets: the six coefficient functions plus declared constants.

Every function is vectorised over a leading batch axis K.  ``s`` / ``s2`` are
:class:`~jumpfield.core.Sites` for the target and the presynaptic particle,
``x`` has shape (K, d), ``seg`` (K, n+1, d) with ``seg[:, j]`` the value at
offset ``j*dt - tau``, ``om`` is the disorder vector and ``xi`` the marks
(K,) of the jumps being integrated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (ConfigError, DelayMeasure, DisorderSample, GaussianInitialLaw,
                   HypothesisRates, Sites)


class CoefficientSet:
    """Base class: zero dynamics in every slot; presets override what they use."""

    model_id = "zero"
    d = 1
    m = 1
    n_b = 1
    nu_total = 0.0
    local_jumps = True
    has_interaction = False
    separable = False
    disorder_dim = 1
    mark_weight_integral = 0.0

    def __init__(self, init_law: GaussianInitialLaw | None = None,
                 delay_measure: DelayMeasure | None = None):
        self.init_law = init_law or GaussianInitialLaw(np.zeros((1, self.d)), np.zeros((1, self.d)))
        self._delay_measure = delay_measure

    # -------------------------------------------------------------- marks
    def mark_sampler(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms to marks drawn from nu / nu(U)."""
        return u

    def delay_measure(self, tau: float) -> DelayMeasure:
        return self._delay_measure or DelayMeasure.dirac(-tau)

    # -------------------------------------------------------- local terms
    def f(self, t, s: Sites, x, om):
        return np.zeros_like(x)

    def g(self, t, s: Sites, x, om):
        return np.zeros(x.shape + (self.m,))

    def h(self, t, s: Sites, x, om, xi):
        return np.zeros_like(x)

    def h_compensator(self, t, s: Sites, x, om):
        return np.zeros_like(x)

    # Second moments against nu.  ``None`` asks callers for a Monte Carlo
    # estimate; models with closed forms override these.
    def h_sq_moment(self, t, s, x, om):
        """Integral of |h|^2 against nu."""
        return None if self.nu_total > 0 else np.zeros(x.shape[0])

    def h_diff_sq_moment(self, t, s, x, x2, om):
        return None if self.nu_total > 0 else np.zeros(x.shape[0])

    # --------------------------------------------------- interaction terms
    def theta(self, t, s, s2, x, seg, om):
        return np.zeros_like(x)

    def beta(self, t, s, s2, x, seg, om):
        return np.zeros(x.shape + (self.n_b,))

    def eta(self, t, s, s2, x, seg, om, xi):
        return np.zeros_like(x)

    def eta_compensator(self, t, s, s2, x, seg, om):
        return np.zeros_like(x)

    def eta_sq_moment(self, t, s, s2, x, seg, om):
        return None if self.nu_total > 0 else np.zeros(x.shape[0])

    def eta_diff_sq_moment(self, t, s, s2, x, seg, x2, seg2, om):
        return None if self.nu_total > 0 else np.zeros(x.shape[0])

    # -------------------------------------------- separable fast path hooks
    # A separable model writes the population-normalised interaction sums
    # through per-cell aggregates of source features:
    #   agg[k, c] = sum over sources r' in cell c of features(r') / S_alpha(c)
    #   wsum[k, c] = #(sources in cell c seen by target k) / S_alpha(c)
    # and eta(..., xi) = eta_lin * mark_weight(xi).
    def features(self, t, s_src: Sites, seg, om):
        """Source features (K, J) entering the per-cell aggregates."""
        raise NotImplementedError(f"model {self.model_id!r} does not declare separable interactions")

    def apply_features(self, t, s: Sites, x, agg, wsum, cell_pop, P, om):
        """Interaction drift (K, d), beta (K, P, d, n_b) and eta_lin (K, P, d).

        ``agg`` has shape (K, C, J): the aggregates seen by each target.
        """
        raise NotImplementedError(f"model {self.model_id!r} does not declare separable interactions")

    def mark_weight(self, xi):
        """Scalar factor of the eta integrand in the mark (separable models)."""
        raise NotImplementedError

    # ------------------------------------------------- declared constants
    def rates(self, om) -> HypothesisRates:
        return HypothesisRates.constant()

    def k_tilde(self, R: float, om) -> float:
        """Declared bound on sup_{|x|<=R} |f| + |g|^2 + int |h|^2 dnu."""
        return 0.0

    def disorder_sample(self, om) -> DisorderSample:
        om = np.asarray(om, dtype=float).reshape(-1)
        return DisorderSample(om, self.rates(om))

    def describe(self) -> dict:
        return {"model_id": self.model_id, "d": self.d, "m": self.m, "n_b": self.n_b,
                "nu_total": self.nu_total}


class SddeCoefficients:
    """Segment-dependent coefficient triple (f, g, h) for a single SDDE path.

    ``f(t, seg, om)`` returns (K, d), ``g`` (K, d, m), ``h(t, seg, om, xi)``
    (K, d) and ``h_compensator`` the nu-integral of ``h``.  Declared constants:
    ``rates(om)`` (K used by the growth condition, L by monotonicity) and
    ``lipschitz_R(R, om)`` for the R-dependent monotonicity constant.
    """

    model_id = "sdde"
    d = 1
    m = 1
    nu_total = 0.0

    def __init__(self, init_law: GaussianInitialLaw | None = None,
                 delay_measure: DelayMeasure | None = None):
        self.init_law = init_law or GaussianInitialLaw(np.zeros((1, self.d)), np.zeros((1, self.d)))
        self._delay_measure = delay_measure

    def delay_measure(self, tau: float) -> DelayMeasure:
        return self._delay_measure or DelayMeasure.dirac(0.0)

    def mark_sampler(self, u):
        return u

    def f(self, t, seg, om):
        return np.zeros(seg[:, -1].shape)

    def g(self, t, seg, om):
        return np.zeros(seg[:, -1].shape + (self.m,))

    def h(self, t, seg, om, xi):
        return np.zeros(seg[:, -1].shape)

    def h_compensator(self, t, seg, om):
        return np.zeros(seg[:, -1].shape)

    def h_sq_moment(self, t, seg, om):
        return None if self.nu_total > 0 else np.zeros(seg.shape[0])

    def h_diff_sq_moment(self, t, seg, seg2, om):
        return None if self.nu_total > 0 else np.zeros(seg.shape[0])

    def rates(self, om) -> HypothesisRates:
        return HypothesisRates.constant()

    def lipschitz_R(self, R: float, om) -> float:
        return self.rates(om).L.values[0]

    def k_tilde(self, R: float, om) -> float:
        return 0.0

    def disorder_sample(self, om) -> DisorderSample:
        om = np.asarray(om, dtype=float).reshape(-1)
        return DisorderSample(om, self.rates(om))


class LocalSdde(SddeCoefficients):
    """View of a network model's local dynamics at fixed sites as an SDDE."""

    def __init__(self, coeffs: CoefficientSet, sites: Sites):
        self.base = coeffs
        self.sites = sites
        self.model_id = coeffs.model_id
        self.d, self.m = coeffs.d, coeffs.m
        self.nu_total = coeffs.nu_total if coeffs.local_jumps else 0.0
        self.init_law = coeffs.init_law
        self._delay_measure = None

    def _s(self, k):
        if len(self.sites) == k:
            return self.sites
        return self.sites.take(np.zeros(k, dtype=np.int64))

    def delay_measure(self, tau):
        return DelayMeasure.dirac(0.0)

    def mark_sampler(self, u):
        return self.base.mark_sampler(u)

    def f(self, t, seg, om):
        return self.base.f(t, self._s(seg.shape[0]), seg[:, -1], om)

    def g(self, t, seg, om):
        return self.base.g(t, self._s(seg.shape[0]), seg[:, -1], om)

    def h(self, t, seg, om, xi):
        return self.base.h(t, self._s(seg.shape[0]), seg[:, -1], om, xi)

    def h_compensator(self, t, seg, om):
        return self.base.h_compensator(t, self._s(seg.shape[0]), seg[:, -1], om)

    def h_sq_moment(self, t, seg, om):
        return self.base.h_sq_moment(t, self._s(seg.shape[0]), seg[:, -1], om)

    def h_diff_sq_moment(self, t, seg, seg2, om):
        return self.base.h_diff_sq_moment(t, self._s(seg.shape[0]), seg[:, -1], seg2[:, -1], om)

    def rates(self, om):
        return self.base.rates(om)

    def k_tilde(self, R, om):
        return self.base.k_tilde(R, om)


# ----------------------------------------------------------- disorder law
@dataclass(frozen=True)
class DisorderDistribution:
    """Law of omega' used by a run: none | normal | uniform | student_t | cauchy."""

    kind: str = "none"
    dim: int = 1
    loc: float = 0.0
    scale: float = 1.0
    df: float = 3.0

    KINDS = ("none", "normal", "uniform", "student_t", "cauchy")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"disorder.distribution must be one of {', '.join(self.KINDS)}")
        if self.dim < 1:
            raise ConfigError("disorder.dim must be >= 1")
        if not self.scale >= 0:
            raise ConfigError("disorder.scale must be >= 0")
        if self.kind == "student_t" and not self.df > 0:
            raise ConfigError("disorder.df must be > 0")

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) (shape (..., dim)) to draws of omega'."""
        from scipy import stats

        v = np.clip(u, 2.0 ** -54, 1.0 - 2.0 ** -53)
        if self.kind == "none":
            return np.full(u.shape, self.loc)
        if self.kind == "normal":
            return self.loc + self.scale * stats.norm.ppf(v)
        if self.kind == "uniform":
            return self.loc + self.scale * (2.0 * u - 1.0)
        if self.kind == "student_t":
            return self.loc + self.scale * stats.t.ppf(v, self.df)
        return self.loc + self.scale * np.tan(math.pi * (v - 0.5))

    def sample(self, run_seed: int, draw: int) -> np.ndarray:
        return self.sample_many(run_seed, [draw])[0]

    def sample_many(self, run_seed: int, draws) -> np.ndarray:
        """Draws (D, dim) of omega' for the given draw indices."""
        from .noise import StreamBatch, StreamKind

        idx = np.asarray(draws, dtype=np.int64).reshape(-1)
        sb = StreamBatch.from_indices(run_seed, int(StreamKind.DISORDER), 0, 0, idx)
        return self.transform(sb.uniforms(0, np.arange(self.dim)))

