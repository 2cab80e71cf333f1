"""TOML run configuration with a closed schema (unknown keys are errors)."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .coefficients import DisorderDistribution
from .core import (Cell, ConfigError, DelayMeasure, SpatialLayout, TimeGrid, homogeneous_layout,
                   lattice_layout, two_cell_layout)

_NUM = (int, float)

# section -> key -> (accepted types, default)
SCHEMA = {
    "grid": {"tau": (_NUM, 1.0), "n": (int, 10), "T": (_NUM, 1.0)},
    "layout": {"kind": (str, "homogeneous"), "N": ((int, list), 1), "P": (int, 1),
               "cells": (list, None), "weights": (list, None)},
    "model": {"id": (str, "linear"), "params": (dict, None)},
    "noise": {"seed": (int, 0), "r_guard": (_NUM, 1e6)},
    "disorder": {"distribution": (str, "none"), "loc": (_NUM, 0.0), "scale": (_NUM, 1.0),
                 "df": (_NUM, 3.0), "dim": (int, 1), "draw": (int, 0), "value": ((list, *_NUM), None)},
    "run": {"mode": (str, "network"), "replicas": (int, 1), "M": (int, 256), "method": (str, "auto"),
            "exclude_self": (bool, False), "record": (str, "full"), "probes": (list, None),
            "eps": (_NUM, 0.0), "stride": (int, 1)},
    "delay_measure": {"offsets": (list, None), "weights": (list, None)},
    "study": {"N": (list, [8, 16, 32, 64]), "replicas": (int, 64), "draws": (int, 8), "M": (int, None),
              "band": (list, [-1.3, -0.7]), "n_se": (_NUM, 2.0), "eps": (_NUM, 0.0)},
    "audit": {"trials": (int, 10000), "seed": (int, 0), "draws": (int, 64)},
}
MODES = ("sdde", "network")
METHODS = ("auto", "fast", "direct")
LAYOUTS = ("homogeneous", "two-cell", "lattice")


@dataclass
class RunConfig:
    """Validated configuration; ``sections`` holds every key with defaults filled."""

    sections: dict
    text: str = ""
    path: str | None = None
    grid: TimeGrid = field(init=False)
    disorder: DisorderDistribution = field(init=False)
    delay_measure: DelayMeasure | None = field(init=False)

    def __post_init__(self):
        g = self.sections["grid"]
        self.grid = TimeGrid(float(g["tau"]), g["n"], float(g["T"]))
        d = self.sections["disorder"]
        self.disorder = DisorderDistribution(d["distribution"], d["dim"], float(d["loc"]),
                                             float(d["scale"]), float(d["df"]))
        dm = self.sections["delay_measure"]
        if (dm["offsets"] is None) != (dm["weights"] is None):
            raise ConfigError("delay_measure: offsets and weights must be given together")
        self.delay_measure = None if dm["offsets"] is None else DelayMeasure(tuple(dm["offsets"]),
                                                                            tuple(dm["weights"]))
        if self.delay_measure is not None:
            self.delay_measure.grid_indices(self.grid.tau, self.grid.n)
        r = self.sections["run"]
        if r["mode"] not in MODES:
            raise ConfigError(f"run.mode must be one of {', '.join(MODES)}")
        if r["method"] not in METHODS:
            raise ConfigError(f"run.method must be one of {', '.join(METHODS)}")
        if r["record"] not in ("full", "moments"):
            raise ConfigError("run.record must be 'full' or 'moments'")
        if r["replicas"] < 1:
            raise ConfigError("run.replicas must be >= 1")
        if r["stride"] < 1:
            raise ConfigError("run.stride must be >= 1")
        if self.sections["layout"]["kind"] not in LAYOUTS:
            raise ConfigError(f"layout.kind must be one of {', '.join(LAYOUTS)}")

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    @property
    def seed(self) -> int:
        return int(self.sections["noise"]["seed"])

    @property
    def model_id(self) -> str:
        return self.sections["model"]["id"]

    @property
    def model_params(self) -> dict:
        return dict(self.sections["model"]["params"] or {})

    def omega(self, draw: int | None = None) -> np.ndarray:
        """omega' of this run: the explicit value or disorder draw ``draw``."""
        d = self.sections["disorder"]
        if d["value"] is not None and draw is None:
            return np.atleast_1d(np.asarray(d["value"], dtype=float))
        return self.disorder.sample(self.seed, d["draw"] if draw is None else draw)

    def layout(self, N=None) -> SpatialLayout:
        """Layout of this run; ``N`` overrides the configured point count."""
        lay = self.sections["layout"]
        N = lay["N"] if N is None else N
        kind = lay["kind"]
        if kind == "homogeneous":
            out = homogeneous_layout(_scalar_n(N), lay["P"])
        elif kind == "two-cell":
            out = two_cell_layout(_scalar_n(N))
        else:
            if not lay["cells"]:
                raise ConfigError("layout.cells is required for kind = 'lattice'")
            cells = tuple(_cell(c, i) for i, c in enumerate(lay["cells"]))
            out = lattice_layout(cells, N, lay["P"], None)
        if lay["weights"] is not None:
            out = SpatialLayout(out.P, out.cells, out.positions, np.asarray(lay["weights"], float))
        return out

    def model(self, cells=None):
        from .presets import build_model

        m = build_model(self.model_id, self.model_params, cells)
        if self.delay_measure is not None:
            m._delay_measure = self.delay_measure
        return m

    def sdde_model(self, cells=None):
        from .presets import build_sdde

        m = build_sdde(self.model_id, self.model_params, cells)
        if self.delay_measure is not None:
            m._delay_measure = self.delay_measure
        return m


def _scalar_n(N) -> int:
    if isinstance(N, list):
        if len(N) != 1:
            raise ConfigError("layout.N must be a single integer for this layout kind")
        N = N[0]
    if int(N) != N or N < 1:
        raise ConfigError("layout.N must be a positive integer")
    return int(N)


def _cell(c, i) -> Cell:
    if not isinstance(c, dict):
        raise ConfigError(f"layout.cells[{i}] must be a table")
    allowed = {"population", "lo", "hi", "mass"}
    extra = set(c) - allowed
    if extra:
        raise ConfigError(f"layout.cells[{i}].{sorted(extra)[0]}: unknown key")
    try:
        return Cell(int(c.get("population", 0)), tuple(float(v) for v in c["lo"]),
                    tuple(float(v) for v in c["hi"]), float(c["mass"]))
    except KeyError as err:
        raise ConfigError(f"layout.cells[{i}].{err.args[0]}: missing key") from None


def _check_type(where: str, value, types):
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise ConfigError(f"{where}: expected {_names(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{where}: expected {_names(types)}, got {type(value).__name__}")


def _names(types) -> str:
    types = types if isinstance(types, tuple) else (types,)
    return " or ".join(t.__name__ for t in types)


def parse_config(text: str, path: str | None = None) -> RunConfig:
    """Parse and validate TOML text."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed TOML: {err}") from None
    sections = {}
    for name in raw:
        if name not in SCHEMA:
            raise ConfigError(f"{name}: unknown section (known: {', '.join(SCHEMA)})")
        if not isinstance(raw[name], dict):
            raise ConfigError(f"{name}: must be a table")
    for name, keys in SCHEMA.items():
        given = raw.get(name, {})
        for key in given:
            if key not in keys:
                raise ConfigError(f"{name}.{key}: unknown key")
        sec = {}
        for key, (types, default) in keys.items():
            if key in given:
                _check_type(f"{name}.{key}", given[key], types)
                sec[key] = given[key]
            else:
                sec[key] = default
        sections[name] = sec
    return RunConfig(sections, text, path)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, str(path))
