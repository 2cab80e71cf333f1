"""Output artifacts: `#`-headed delimited tables, JSON reports and run manifests.

Every file is written to a temporary name in the target directory and moved
into place, so readers never see partial output.  Floats are written with 17
significant digits so that identical runs give identical bytes.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__

MANIFEST_NAME = "manifest.json"
VOLATILE_MANIFEST_KEYS = ("wall_clock_s",)


def atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def table_text(columns, rows, meta: dict | None = None, delimiter: str = "\t") -> str:
    lines = [f"# {k}: {json.dumps(_plain(v), sort_keys=True)}" for k, v in (meta or {}).items()]
    lines.append("# " + delimiter.join(columns))
    for r in rows:
        lines.append(delimiter.join(fmt(v) for v in r))
    return "\n".join(lines) + "\n"


def write_table(path: str, columns, rows, meta: dict | None = None) -> str:
    atomic_write_text(path, table_text(columns, rows, meta))
    return path


def read_table(path: str):
    """Return (meta dict, column names, rows) of a table written above.

    Rows are a float array, or an object array when a column holds text.
    """
    meta, columns, data = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# ") and columns is None and ": " in line and "\t" not in line:
                k, v = line[2:].split(": ", 1)
                meta[k] = json.loads(v)
            elif line.startswith("# "):
                columns = line[2:].split("\t")
            elif line:
                data.append([_cell(x) for x in line.split("\t")])
    numeric = all(isinstance(v, float) for r in data for v in r)
    return meta, columns, np.array(data, dtype=float if numeric else object)


def _cell(x: str):
    try:
        return float(x)
    except ValueError:
        return x


def write_json(path: str, obj) -> str:
    atomic_write_text(path, json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if np.isfinite(f) else str(f)
    return v


@dataclass
class RunManifest:
    """Everything needed to reproduce a run; ``wall_clock_s`` is informational only."""

    config_hash: str
    config_text: str
    run_seed: int
    mode: str
    model_id: str
    grid: dict
    layout: dict | None
    outputs: list
    software_version: str = __version__
    extra: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def write(self, out_dir: str) -> str:
        return write_json(os.path.join(out_dir, MANIFEST_NAME), asdict(self))


def load_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def stable_manifest(m: dict) -> dict:
    """Manifest without the fields that legitimately differ between reruns."""
    return {k: v for k, v in m.items() if k not in VOLATILE_MANIFEST_KEYS}


# ------------------------------------------------------------ writers
def trajectory_rows(times, values, stride: int = 1, particle_ids=None, replicas=None):
    """Rows (t, replica, particle, x_0..x_{d-1}) of values (T, R, N, d)."""
    T, R, N, d = values.shape
    pid = np.arange(N) if particle_ids is None else particle_ids
    rid = np.arange(R) if replicas is None else replicas
    for j in range(0, T, stride):
        for r in range(R):
            for i in range(N):
                yield [float(times[j]), int(rid[r]), int(pid[i]), *values[j, r, i].tolist()]


def write_trajectories(path: str, times, values, meta: dict, stride: int = 1,
                       particle_ids=None, replicas=None) -> str:
    d = values.shape[-1]
    cols = ["t", "replica", "particle"] + [f"x{k}" for k in range(d)]
    return write_table(path, cols, trajectory_rows(times, values, stride, particle_ids, replicas), meta)
