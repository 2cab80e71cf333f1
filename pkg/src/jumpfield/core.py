"""Shared data model: grids, path segments, delay measures, layouts, disorder."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class DomainError(ValueError):
    """Argument outside the domain of a mathematical operation."""


class BlowUpError(RuntimeError):
    """A trajectory left the guard ball or became non-finite."""

    def __init__(self, step: int, index: int, norm: float, what: str = "particle"):
        self.step = step
        self.index = index
        self.norm = norm
        super().__init__(f"integration blow-up at step {step}: {what} {index} has |X| = {norm:.6g}")


def _near_int(x: float, tol: float = 1e-9) -> int | None:
    k = round(x)
    return int(k) if abs(x - k) <= tol * max(1.0, abs(x)) else None


# ---------------------------------------------------------------- time grid
@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [-tau, horizon] with ``n`` steps per delay window."""

    tau: float
    n: int
    horizon: float

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ConfigError("grid.tau must be a positive real")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("grid.n must be a positive integer")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("grid.horizon must be a positive real")
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return self.tau / self.n

    @property
    def num_steps(self) -> int:
        """Number of grid intervals covering [-tau, horizon]."""
        x = (self.horizon + self.tau) / self.dt
        k = _near_int(x)
        return k if k is not None else math.ceil(x)

    @property
    def forward_steps(self) -> int:
        return self.num_steps - self.n

    @property
    def times(self) -> np.ndarray:
        """Grid times -tau + j*dt for j = 0..num_steps."""
        return (np.arange(self.num_steps + 1) - self.n) * self.dt

    def time_of_step(self, k: int) -> float:
        """Time t_k = k*dt of forward step ``k`` (t_0 = 0)."""
        return k * self.dt


def kappa(grid: TimeGrid, t: float) -> float:
    """Grid freezing map: k*tau/n for t in (k*tau/n, (k+1)*tau/n].

    Products that land within rounding of a grid point are treated as that
    grid point, so t = 0.3 with dt = 0.1 maps to 0.2.
    """
    if not t > 0:
        raise DomainError("kappa is defined for t > 0 only")
    x = t * grid.n / grid.tau
    k = _near_int(x, 1e-12)
    k = k - 1 if k is not None else math.ceil(x) - 1
    return k * grid.tau / grid.n


# ------------------------------------------------------------ path segments
@dataclass(frozen=True)
class PathSegment:
    """Caglad sample of a path on [-tau, 0]: ``values[j]`` is y((j*dt - tau)-)."""

    values: np.ndarray
    tau: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("PathSegment values must have shape (n+1, d) with n >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("PathSegment values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dt(self) -> float:
        return self.tau / self.n

    def at(self, j: int) -> np.ndarray:
        return self.values[j]

    def right_limit(self, j: int) -> np.ndarray:
        """y at the right limit of grid offset j; the last index maps to itself."""
        return self.values[min(j + 1, self.n)]


@dataclass(frozen=True)
class DelayMeasure:
    """Probability measure on [-tau, 0] given by weighted atoms."""

    offsets: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        offsets = tuple(float(s) for s in self.offsets)
        weights = tuple(float(w) for w in self.weights)
        if len(offsets) == 0 or len(offsets) != len(weights):
            raise ConfigError("delay_measure.offsets and delay_measure.weights must be non-empty and of equal length")
        if any(not (w > 0) for w in weights):
            raise ConfigError("delay_measure.weights must be positive")
        if abs(sum(weights) - 1.0) > 1e-12:
            raise ConfigError(f"delay_measure.weights must sum to 1 (got {sum(weights):.15g})")
        if any(s > 0 for s in offsets):
            raise ConfigError("delay_measure.offsets must lie in [-tau, 0]")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def dirac(cls, offset: float) -> "DelayMeasure":
        return cls((offset,), (1.0,))

    def grid_indices(self, tau: float, n: int) -> np.ndarray:
        """Segment indices of the atoms; off-grid atoms are a configuration error."""
        dt = tau / n
        out = []
        for s in self.offsets:
            if s < -tau * (1 + 1e-12):
                raise ConfigError(f"delay_measure.offsets: atom {s} lies before -tau = {-tau}")
            j = _near_int((s + tau) / dt)
            if j is None or not 0 <= j <= n:
                raise ConfigError(f"delay_measure.offsets: atom {s} is not a grid offset (dt = {dt})")
            out.append(j)
        return np.asarray(out, dtype=np.int64)


def _segment_arrays(seg, seg2):
    if isinstance(seg, PathSegment):
        tau = seg.tau
        a = seg.values
    else:
        raise TypeError("delay_integral expects PathSegment arguments")
    if seg2 is None:
        return tau, a
    if not isinstance(seg2, PathSegment):
        raise TypeError("delay_integral expects PathSegment arguments")
    if seg2.values.shape != a.shape or abs(seg2.tau - tau) > 1e-12 * tau:
        raise ValueError("segments live on different grids (shape error)")
    return tau, a - seg2.values


def delay_integral(seg: PathSegment, seg2: PathSegment | None, lam: DelayMeasure) -> float:
    """Integral of |y_s|^2 + 1{s<0}|y_{s+}|^2 against ``lam`` (or of the difference)."""
    tau, y = _segment_arrays(seg, seg2)
    n = y.shape[0] - 1
    idx = lam.grid_indices(tau, n)
    return float(delay_integral_batch(y[None], idx, np.asarray(lam.weights))[0])


def delay_integral_batch(y: np.ndarray, idx: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Vectorised delay integral over a batch of segments ``y`` (K, n+1, d)."""
    n = y.shape[1] - 1
    sq = np.einsum("kjd,kjd->kj", y, y)
    right = np.minimum(idx + 1, n)
    interior = (idx < n).astype(float)
    return sq[:, idx] @ weights + sq[:, right] @ (weights * interior)


# --------------------------------------------------------- spatial layout
@dataclass(frozen=True)
class Cell:
    """Axis-aligned box [lo, hi) inside one subpopulation, with its R-mass."""

    population: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    mass: float

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.asarray(self.lo)) & (pts < np.asarray(self.hi)), axis=1)


@dataclass(frozen=True)
class Sites:
    """Positions handed to coefficient functions, with their cell and population."""

    pos: np.ndarray
    cell: np.ndarray
    pop: np.ndarray

    def __len__(self) -> int:
        return self.pos.shape[0]

    def take(self, idx) -> "Sites":
        return Sites(self.pos[idx], self.cell[idx], self.pop[idx])

    def tile(self, reps: int) -> "Sites":
        return Sites(np.tile(self.pos, (reps, 1)), np.tile(self.cell, reps), np.tile(self.pop, reps))


@dataclass(frozen=True)
class SpatialLayout:
    """Subpopulations, refinement cells, neuron positions and weights S_alpha."""

    P: int
    cells: tuple[Cell, ...]
    positions: np.ndarray
    weights: np.ndarray = None
    cell_of: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.P < 1:
            raise ConfigError("layout.P must be >= 1")
        cells = tuple(self.cells)
        if not cells:
            raise ConfigError("layout.cells must be non-empty")
        for c in cells:
            if not 0 <= c.population < self.P:
                raise ConfigError(f"layout.cells: population {c.population} outside 0..{self.P - 1}")
            if c.mass < 0:
                raise ConfigError("layout.cells: R-mass must be >= 0")
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.size == 0:
            pos = pos.reshape(0, len(cells[0].lo))
        membership = np.stack([c.contains(pos) for c in cells], axis=1) if len(pos) else np.zeros((0, len(cells)), bool)
        hits = membership.sum(axis=1)
        if np.any(hits != 1):
            bad = int(np.flatnonzero(hits != 1)[0])
            raise ConfigError(f"layout.positions: point {bad} lies in {int(hits[bad])} cells (must be exactly one)")
        cell_of = np.argmax(membership, axis=1) if len(pos) else np.zeros(0, np.int64)
        pos.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "cell_of", cell_of.astype(np.int64))
        counts = self.population_counts()
        if self.weights is None:
            w = counts.astype(float)
        else:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != (self.P,):
                raise ConfigError(f"layout.weights must have length P = {self.P}")
        if np.any(w == 0) or not np.all(np.isfinite(w)):
            raise ConfigError("layout.weights: S_alpha must be finite and nonzero for every population")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @property
    def cell_population(self) -> np.ndarray:
        return np.array([c.population for c in self.cells], dtype=np.int64)

    @property
    def cell_mass(self) -> np.ndarray:
        return np.array([c.mass for c in self.cells], dtype=float)

    @property
    def population(self) -> np.ndarray:
        return self.cell_population[self.cell_of]

    def population_mass(self) -> np.ndarray:
        return np.bincount(self.cell_population, weights=self.cell_mass, minlength=self.P)

    def population_counts(self) -> np.ndarray:
        pops = np.array([c.population for c in self.cells], dtype=np.int64)[self.cell_of]
        return np.bincount(pops, minlength=self.P)

    def cell_counts(self) -> np.ndarray:
        return np.bincount(self.cell_of, minlength=self.num_cells)

    def sites(self) -> Sites:
        return Sites(self.positions, self.cell_of, self.population)

    def midpoint_sites(self) -> Sites:
        pos = np.stack([c.midpoint for c in self.cells])
        idx = np.arange(self.num_cells)
        return Sites(pos, idx, self.cell_population)

    def ratio_audit(self) -> np.ndarray:
        """Per-cell |#(A_N ∩ cell)/S_alpha - R(cell)|."""
        ratios = self.cell_counts() / self.weights[self.cell_population]
        return np.abs(ratios - self.cell_mass)

    def weight_bound(self) -> float:
        """Sum over populations of (#A_N ∩ Gamma_alpha)^2 / S_alpha^2."""
        return float(np.sum(self.population_counts() ** 2 / self.weights ** 2))

    def cell_discrepancy(self) -> np.ndarray:
        """Per population: M_alpha * sum_m (#cell/S_alpha - R(cell))^2."""
        cp = self.cell_population
        dev = (self.cell_counts() / self.weights[cp] - self.cell_mass) ** 2
        ncell = np.bincount(cp, minlength=self.P)
        return ncell * np.bincount(cp, weights=dev, minlength=self.P)

    def summary(self) -> dict:
        return {
            "P": self.P,
            "N": self.N,
            "cells": self.num_cells,
            "S": [float(s) for s in self.weights],
            "counts": [int(c) for c in self.population_counts()],
        }


def _allocate(total: int, masses: np.ndarray) -> np.ndarray:
    """Largest-remainder split of ``total`` points proportional to ``masses``."""
    masses = np.asarray(masses, dtype=float)
    if masses.sum() <= 0:
        raise ConfigError("layout.cells: total R-mass of a population must be positive")
    share = total * masses / masses.sum()
    base = np.floor(share).astype(int)
    rem = total - base.sum()
    order = np.argsort(-(share - base), kind="stable")
    base[order[:rem]] += 1
    return base


def lattice_layout(cells, N_per_population, P: int | None = None, weights=None) -> SpatialLayout:
    """Deterministic lattice placement: each cell's share of points on a midline grid."""
    cells = tuple(cells)
    P = P if P is not None else 1 + max(c.population for c in cells)
    if np.isscalar(N_per_population):
        N_per_population = [int(N_per_population)] * P
    if len(N_per_population) != P:
        raise ConfigError(f"layout.N must have one entry per population ({P})")
    pts = []
    for alpha in range(P):
        idx = [i for i, c in enumerate(cells) if c.population == alpha]
        if not idx:
            raise ConfigError(f"layout.cells: population {alpha} has no cells")
        counts = _allocate(int(N_per_population[alpha]), [cells[i].mass for i in idx])
        for i, cnt in zip(idx, counts):
            c = cells[i]
            lo, hi = np.asarray(c.lo, float), np.asarray(c.hi, float)
            for j in range(cnt):
                p = 0.5 * (lo + hi)
                p[0] = lo[0] + (j + 0.5) / cnt * (hi[0] - lo[0])
                pts.append(p)
    k = len(cells[0].lo)
    positions = np.array(pts) if pts else np.zeros((0, k))
    return SpatialLayout(P=P, cells=cells, positions=positions, weights=weights)


def homogeneous_layout(N: int, P: int = 1) -> SpatialLayout:
    """P unit intervals [alpha, alpha+1), one cell of mass 1 each, N points per population."""
    cells = tuple(Cell(a, (float(a),), (float(a + 1),), 1.0) for a in range(P))
    return lattice_layout(cells, N, P)


def two_cell_layout(N: int) -> SpatialLayout:
    """One population on [0, 1) split into two half-mass cells."""
    cells = (Cell(0, (0.0,), (0.5,), 0.5), Cell(0, (0.5,), (1.0,), 0.5))
    return lattice_layout(cells, N, 1)


# ------------------------------------------------------- rates and disorder
@dataclass(frozen=True)
class PiecewiseConstant:
    """Nonnegative right-continuous step function of t on [0, inf)."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        b = tuple(float(x) for x in self.breaks)
        v = tuple(float(x) for x in self.values)
        if len(b) != len(v) or not b or b[0] != 0.0:
            raise ValueError("breaks must start at 0 and match values in length")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError("breaks must be strictly increasing")
        if any(not (x >= 0) or not math.isfinite(x) for x in v):
            raise ValueError("rate values must be finite and nonnegative")
        object.__setattr__(self, "breaks", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (value,))

    def __call__(self, t):
        i = np.searchsorted(self.breaks, t, side="right") - 1
        return np.asarray(self.values)[np.maximum(i, 0)]

    def integral(self, t: float) -> float:
        """Exact integral over [0, t]."""
        if t < 0:
            raise DomainError("integral upper limit must be >= 0")
        total = 0.0
        edges = list(self.breaks) + [math.inf]
        for a, b, v in zip(edges[:-1], edges[1:], self.values):
            if t <= a:
                break
            total += v * (min(b, t) - a)
        return total


@dataclass(frozen=True)
class HypothesisRates:
    """Rate functions K, L, Kbar, Lbar for one disorder realisation."""

    K: PiecewiseConstant
    L: PiecewiseConstant
    Kbar: PiecewiseConstant
    Lbar: PiecewiseConstant

    @classmethod
    def constant(cls, K=0.0, L=0.0, Kbar=0.0, Lbar=0.0) -> "HypothesisRates":
        c = PiecewiseConstant.constant
        return cls(c(K), c(L), c(Kbar), c(Lbar))


@dataclass(frozen=True)
class DisorderSample:
    """One realisation of the disorder parameter and its rate functions."""

    omega_prime: np.ndarray
    rates: HypothesisRates

    def __post_init__(self):
        w = np.asarray(self.omega_prime, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "omega_prime", w)


# --------------------------------------------------------- initial laws
@dataclass(frozen=True)
class GaussianInitialLaw:
    """Constant-in-time initial paths with Gaussian marginals per population."""

    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        m = np.atleast_2d(np.asarray(self.mean, dtype=float))
        s = np.atleast_2d(np.asarray(self.sd, dtype=float))
        m, s = np.broadcast_arrays(m, s)
        if np.any(s < 0):
            raise ConfigError("initial law sd must be >= 0")
        object.__setattr__(self, "mean", np.array(m))
        object.__setattr__(self, "sd", np.array(s))

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    def _row(self, pop):
        pop = np.asarray(pop)
        return np.minimum(pop, self.mean.shape[0] - 1)

    def sample(self, normals: np.ndarray, pop) -> np.ndarray:
        """Initial values (K, d) from standard normals (K, d)."""
        row = self._row(pop)
        return self.mean[row] + self.sd[row] * normals

    def sup_second_moment(self) -> float:
        """sup over u and populations of E|z(u)|^2."""
        return float(np.max(np.sum(self.mean ** 2 + self.sd ** 2, axis=1)))
