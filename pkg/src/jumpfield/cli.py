"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 numerical blow-up,
3 failed audit or acceptance check under ``--check``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .core import BlowUpError, ConfigError, DomainError

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "JUMPFIELD_OUT_DIR"


class CheckFailed(Exception):
    pass


def _grid_dict(grid):
    return {"tau": grid.tau, "n": grid.n, "T": grid.horizon, "dt": grid.dt}


def _emit(out_dir, cfg, mode, outputs, layout, t0, extra=None):
    from .io import RunManifest

    m = RunManifest(cfg.digest, cfg.text, cfg.seed, mode, cfg.model_id, _grid_dict(cfg.grid),
                    layout.summary() if layout is not None else None,
                    sorted(os.path.basename(p) for p in outputs), extra=extra or {},
                    wall_clock_s=round(time.perf_counter() - t0, 3))
    m.write(out_dir)


def _moment_rows(times, mean, se):
    return [[t, m, s] for t, m, s in zip(times, mean, se)]


# ---------------------------------------------------------------- modes
def cmd_simulate(cfg, args, out_dir):
    from .io import write_table, write_trajectories
    from .network import simulate_network

    t0 = time.perf_counter()
    run = cfg["run"]
    mode = args.mode or run["mode"]
    layout = cfg.layout()
    meta = {"mode": mode, "model": cfg.model_id, "seed": cfg.seed}
    outputs = []
    if mode == "sdde":
        from .sdde import sdde_moment_bound, simulate_sdde_paths

        coeffs = cfg.sdde_model(layout.cells)
        om = coeffs.disorder_sample(cfg.omega())
        reps = np.arange(run["replicas"])
        r_guard = float(cfg["noise"]["r_guard"])
        if run["record"] == "moments":
            pm = simulate_sdde_paths(coeffs, cfg.grid, om, cfg.seed, reps, record="moments", r_guard=r_guard)
            times, sq, sq_se = pm.times, pm.sq_mean, pm.sq_se
            cols = ["t", "second_moment", "se"] + [f"mean_x{k}" for k in range(coeffs.d)] + \
                [f"var_x{k}" for k in range(coeffs.d)]
            rows = [[t, a, b, *m.tolist(), *v.tolist()]
                    for t, a, b, m, v in zip(pm.times, pm.sq_mean, pm.sq_se, pm.mean, pm.var)]
            outputs.append(write_table(os.path.join(out_dir, "moments.tsv"), cols, rows, meta))
        else:
            tr = simulate_sdde_paths(coeffs, cfg.grid, om, cfg.seed, reps, r_guard=r_guard)
            outputs.append(write_trajectories(os.path.join(out_dir, "trajectories.tsv"), cfg.grid.times,
                                              tr[:, :, None, :], meta, run["stride"], [0], reps))
            q = np.einsum("tkd,tkd->tk", tr, tr)
            times, sq = cfg.grid.times, q.mean(axis=1)
            sq_se = q.std(axis=1, ddof=1) / np.sqrt(q.shape[1]) if q.shape[1] > 1 else np.zeros_like(sq)
            outputs.append(write_table(os.path.join(out_dir, "moments.tsv"), ["t", "second_moment", "se"],
                                       _moment_rows(times, sq, sq_se), meta))
        failed = []
        if args.check:
            z2 = coeffs.init_law.sup_second_moment()
            bound = np.array([sdde_moment_bound(max(t, 0.0), z2, om.rates) for t in times])
            failed = [float(t) for t, a, s, b in zip(times, sq, sq_se, bound) if 1 + 2 * a > b + 3 * 2 * s]
        _emit(out_dir, cfg, "simulate-sdde", outputs, None, t0)
        if failed:
            raise CheckFailed(f"moment estimate violated at t = {failed[0]:g} ({len(failed)} grid times)")
        return
    if mode != "network":
        raise ConfigError("run.mode must be 'sdde' or 'network'")
    coeffs = cfg.model(layout.cells)
    om = coeffs.disorder_sample(cfg.omega())
    ens = simulate_network(layout, coeffs, cfg.grid, om, cfg.seed, replicas=np.arange(run["replicas"]),
                           method=run["method"], exclude_self=run["exclude_self"],
                           r_guard=float(cfg["noise"]["r_guard"]), threads=args.threads)
    outputs.append(write_trajectories(os.path.join(out_dir, "trajectories.tsv"), ens.times, ens.values,
                                      meta, run["stride"], ens.particle_ids, ens.replicas))
    mean, se = ens.second_moment()
    cov = ens.cross_covariance(0)
    rows = [[t, m, s, c] for t, m, s, c in zip(ens.times, mean, se, cov)]
    outputs.append(write_table(os.path.join(out_dir, "moments.tsv"),
                               ["t", "second_moment", "se", "cross_cov_x0"], rows, meta))
    report = None
    if args.check:
        report = _hypothesis_audit(cfg, coeffs, layout)
    _emit(out_dir, cfg, "simulate-network", outputs, layout, t0)
    if report is not None and not all(r.ok for r in report):
        raise CheckFailed("declared hypothesis constants are violated")


def cmd_meanfield(cfg, args, out_dir):
    from .io import write_table, write_trajectories
    from .meanfield import bounds_table, simulate_mean_field

    t0 = time.perf_counter()
    run = cfg["run"]
    layout = cfg.layout()
    coeffs = cfg.model(layout.cells)
    om = coeffs.disorder_sample(cfg.omega())
    res = simulate_mean_field(layout, coeffs, cfg.grid, run["M"], om, cfg.seed,
                              replicas=np.arange(run["replicas"]), probes=run["probes"],
                              method=run["method"], r_guard=float(cfg["noise"]["r_guard"]),
                              threads=args.threads)
    meta = {"mode": "meanfield", "model": cfg.model_id, "seed": cfg.seed, "M": run["M"]}
    ens = res.ensemble
    outputs = [write_trajectories(os.path.join(out_dir, "trajectories.tsv"), ens.times, ens.values, meta,
                                  run["stride"], ens.particle_ids, ens.replicas)]
    bt = bounds_table(res.law, layout, coeffs, om, eps=float(run["eps"]))
    rows = [[t, a, s, c1, c2, g, gs, int(mo), int(co)] for t, a, s, c1, c2, g, gs, mo, co in zip(
        bt.times, bt.second_moment, bt.second_moment_se, bt.c1, bt.c2_eps, bt.pair_gap, bt.pair_gap_se,
        bt.moment_ok, bt.continuity_ok)]
    cols = ["t", "empirical_second_moment", "se", "C1", "C2_eps", "probe_gap", "probe_gap_se",
            "moment_ok", "continuity_ok"]
    outputs.append(write_table(os.path.join(out_dir, "bounds.tsv"), cols, rows, meta))
    _emit(out_dir, cfg, "meanfield", outputs, layout, t0)
    if args.check and not bt.ok:
        raise CheckFailed("mean-field moment or continuity bound violated")


def cmd_chaos(cfg, args, out_dir):
    from .chaos import ChaosReport, convergence_study
    from .io import write_json, write_table

    t0 = time.perf_counter()
    st = cfg["study"]
    run = cfg["run"]

    def progress(N, d, gap):
        print(f"N={N} draw={d} gap={gap:.6g}", file=sys.stderr)

    rep = convergence_study(lambda N: cfg.layout(N), lambda cells: cfg.model(cells), cfg.grid, st["N"],
                            cfg.seed, replicas=st["replicas"], draws=st["draws"], M=st["M"],
                            disorder=cfg.disorder, eps=float(st["eps"]), method=run["method"],
                            threads=args.threads, band=tuple(st["band"]), n_se=float(st["n_se"]),
                            progress=progress if args.verbose else None)
    meta = {"mode": "chaos-study", "model": cfg.model_id, "seed": cfg.seed, "slope": rep.slope,
            "slope_se": rep.slope_se, "intercept": rep.intercept}
    outputs = [write_table(os.path.join(out_dir, "chaos.tsv"), ChaosReport.COLUMNS, rep.rows(), meta),
               write_json(os.path.join(out_dir, "chaos.json"), rep.to_dict())]
    _emit(out_dir, cfg, "chaos-study", outputs, None, t0)
    print(f"slope {rep.slope:.4f} (se {rep.slope_se:.3g}); decreasing {rep.decreasing()}")
    if args.check and not (rep.strictly_decreasing and rep.slope_ok and rep.bound_ok
                           and rep.initial_window_exact):
        raise CheckFailed("chaos study acceptance failed")


def _hypothesis_audit(cfg, coeffs, layout):
    from .checks import check_growth, check_monotonicity, default_sampler

    au = cfg["audit"]
    sampler = default_sampler(coeffs, layout, cfg.disorder, au["seed"], cfg.grid.tau, cfg.grid.n,
                              cfg.grid.horizon)
    return [check_monotonicity(coeffs, sampler, au["trials"]), check_growth(coeffs, sampler, au["trials"])]


def cmd_audit(cfg, args, out_dir):
    from .chaos import disorder_integrability_audit
    from .io import write_table

    t0 = time.perf_counter()
    layout = cfg.layout()
    coeffs = cfg.sdde_model(layout.cells) if cfg["run"]["mode"] == "sdde" else cfg.model(layout.cells)
    reports = _hypothesis_audit(cfg, coeffs, layout)
    rows = []
    for rep in reports:
        for c in rep.conditions:
            rows.append([rep.kind, c.name.replace(" ", "_"), c.max_violation, c.trials, int(c.ok)])
    audit = disorder_integrability_audit(lambda om: coeffs.rates(om), layout.P, layout.weight_bound(),
                                         cfg.grid.horizon, cfg["audit"]["draws"], cfg.disorder, cfg.seed)
    meta = {"mode": "audit", "model": cfg.model_id, "seed": cfg.seed,
            "integrability_estimate": audit.estimate, "integrability_se": audit.se,
            "integrability_divergent": audit.divergent, "weight_bound": layout.weight_bound(),
            "ratio_audit_max": float(layout.ratio_audit().max())}
    path = write_table(os.path.join(out_dir, "audit.tsv"), ["kind", "condition", "max_violation", "trials", "ok"],
                       rows, meta)
    _emit(out_dir, cfg, "audit", [path], layout, t0)
    for r in rows:
        print(f"{r[0]:<13} {r[1]:<24} max violation {r[2]: .3e}  {'ok' if r[4] else 'VIOLATED'}")
    ok = all(rep.ok for rep in reports) and not audit.divergent
    if args.check and not ok:
        raise CheckFailed("hypothesis audit failed")


def cmd_list_models(args):
    from .presets import catalogue

    for entry in catalogue():
        print(f"{entry['id']}: {entry['summary']}")
        for k, v in entry["defaults"].items():
            print(f"    {k} = {json.dumps(v)}")


# ---------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpfield", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"jumpfield {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=None, help="run seed (overrides noise.seed)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
        sp.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
        sp.add_argument("--check", action="store_true", help="exit 3 when an audit or bound check fails")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("simulate", help="single SDDE paths or a finite network")
    common(sp)
    sp.add_argument("--mode", choices=("sdde", "network"), default=None, help="overrides run.mode")
    common(sub.add_parser("meanfield", help="mean-field limit with M copies and its bounds"))
    common(sub.add_parser("chaos-study", help="network vs limit gap as a function of N"))
    common(sub.add_parser("audit", help="check declared hypothesis constants"))
    sub.add_parser("list-models", help="print the model catalogue")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-models":
        cmd_list_models(args)
        return EXIT_OK
    from .config import load_config

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.sections["noise"]["seed"] = int(args.seed)
        if args.threads is None:
            args.threads = os.cpu_count() or 1
        elif args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out_dir = args.out or os.environ.get(OUT_ENV) or "out"
        os.makedirs(out_dir, exist_ok=True)
        handler = {"simulate": cmd_simulate, "meanfield": cmd_meanfield, "chaos-study": cmd_chaos,
                   "audit": cmd_audit}[args.command]
        handler(cfg, args, out_dir)
    except (ConfigError, DomainError) as err:
        print(f"jumpfield: configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as err:
        print(f"jumpfield: numerical blow-up: {err}", file=sys.stderr)
        return EXIT_BLOWUP
    except CheckFailed as err:
        print(f"jumpfield: check failed: {err}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def main() -> None:
    sys.exit(run())
