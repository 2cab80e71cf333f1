"""The eleven acceptance criteria at their stated tolerances.

Each test prints one ``criterion k: PASS|FAIL ...`` line; the lines are also
collected into an "acceptance criteria" section of the pytest summary.
"""
import math
import os

import numpy as np
import pytest

from jumpfield.chaos import convergence_study, coupled_gap
from jumpfield.checks import check_growth, check_monotonicity, default_sampler
from jumpfield.cli import run as cli_run
from jumpfield.coefficients import DisorderDistribution
from jumpfield.core import DisorderSample, HypothesisRates, TimeGrid, homogeneous_layout, two_cell_layout
from jumpfield.io import load_manifest, stable_manifest
from jumpfield.meanfield import bounds_table, simulate_law, simulate_mean_field
from jumpfield.network import simulate_network
from jumpfield.noise import NoiseStreamKey, StreamKind
from jumpfield.presets import (Counterexample, ElectricalCoupling, FhnModel, FhnParameters, LinearNetwork,
                               LinearParameters, LinearSdde, ZeroModel, build_sdde, delay_ode_mean)
from jumpfield.sdde import sdde_moment_bound, simulate_sdde, simulate_sdde_paths

THREADS = os.cpu_count() or 1
FHN_GRID = TimeGrid(0.5, 25, 2.0)
NORMAL = DisorderDistribution("normal")


def report(record_property, k, ok, detail):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    record_property("acceptance", line)
    assert ok, line


@pytest.fixture(scope="module")
def linear_run():
    p = LinearParameters(a=1.0, b_delay=0.0, sigma=1.0, c_jump=1.0, nu_total=2.0, x0=1.0)
    m = LinearSdde(p)
    grid = TimeGrid(1e-3, 1, 1.0)
    om = m.disorder_sample(np.zeros(1))
    pm = simulate_sdde_paths(m, grid, om, 20240101, np.arange(100_000), record="moments")
    return m, grid, om, pm


@pytest.fixture(scope="module")
def chaos_report():
    lay = lambda N: homogeneous_layout(N)
    model = lambda cells: FhnModel(FhnParameters(), cells)
    return convergence_study(lay, model, FHN_GRID, [8, 16, 32, 64, 128], 2024, replicas=64, draws=4,
                             M=1024, disorder=NORMAL, threads=THREADS)


def test_criterion_1_oracle_mean(linear_run, record_property):
    _, _, _, pm = linear_run
    m, se = pm.mean[-1, 0], pm.mean_se[-1, 0]
    err = abs(m - math.exp(-1.0))
    report(record_property, 1, err <= 3 * se,
           f"mean X_1 = {m:.5f}, |err| = {err:.2e} <= 3 SE = {3 * se:.2e} ({pm.count} paths)")


def test_criterion_2_oracle_variance(linear_run, record_property):
    _, _, _, pm = linear_run
    v, se = pm.var[-1, 0], pm.var_se[-1, 0]
    exact = 1.5 * (1 - math.exp(-2.0))
    err = abs(v - exact)
    ok = err <= 3 * se and err / exact < 0.02
    report(record_property, 2, ok, f"Var X_1 = {v:.5f} vs {exact:.5f}, |err| = {err:.2e}, 3 SE = {3 * se:.2e}, "
                                   f"rel = {err / exact:.2%}")


def test_criterion_3_weak_order(record_property):
    p = LinearParameters(a=1.0, b_delay=0.5, sigma=0.0, c_jump=0.0, nu_total=0.0, x0=1.0)
    m = LinearSdde(p)
    om = m.disorder_sample(np.zeros(1))
    exact = delay_ode_mean(p.a, p.b_delay, p.x0, 1.0, np.array([2.0]))[0]
    errs = []
    for n in (100, 200, 400):  # dt = 1e-2, 5e-3, 2.5e-3 with tau = 1
        path = simulate_sdde(m, TimeGrid(1.0, n, 2.0), om, NoiseStreamKey(1, StreamKind.W_LOCAL, 0, 0, 0))
        errs.append(abs(path[-1, 0] - exact))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(1.5 <= r <= 3.0 for r in ratios)
    report(record_property, 3, ok, f"|mean error| {errs[0]:.3e}, {errs[1]:.3e}, {errs[2]:.3e}; "
                                   f"ratios {ratios[0]:.3f}, {ratios[1]:.3f}")


def test_criterion_4_meanfield_moment_bound(record_property):
    lay = homogeneous_layout(1)
    model = FhnModel(FhnParameters(), lay.cells)
    omegas = NORMAL.sample_many(4, np.arange(8))
    worst = -math.inf
    ok = True
    for d, w in enumerate(omegas):
        om = model.disorder_sample(w)
        law = simulate_law(lay, model, FHN_GRID, 1024, om, 100 + d)
        tab = bounds_table(law, lay, model, om)
        ok &= bool(np.all(tab.moment_ok))
        worst = max(worst, float(np.max(np.maximum.accumulate(tab.second_moment - 3 * tab.second_moment_se)
                                        / tab.c1)))
    report(record_property, 4, ok, f"8 draws, M = 1024, T = 2: max (sup E|X|^2 - 3 SE) / C1 = {worst:.3e}")


def test_criterion_5_sdde_moment_estimate(linear_run, record_property):
    cases = [linear_run[:4]]
    p = LinearParameters(a=1.0, b_delay=0.8, sigma=1.0, c_jump=1.0, nu_total=2.0, x0=1.0, x0_sd=0.5)
    m = LinearSdde(p)
    om = m.disorder_sample(np.zeros(1))
    grid = TimeGrid(1.0, 50, 3.0)
    cases.append((m, grid, om, simulate_sdde_paths(m, grid, om, 5, np.arange(20_000), record="moments")))
    ok, worst = True, -math.inf
    for m, grid, om, pm in cases:
        z2 = m.init_law.sup_second_moment()
        bound = np.array([sdde_moment_bound(max(t, 0.0), z2, om.rates) for t in pm.times])
        lhs, se = 1 + 2 * pm.sq_mean, 2 * pm.sq_se
        ok &= bool(np.all(lhs <= bound + 3 * se))
        worst = max(worst, float(np.max((lhs - 3 * se) / bound)))
    report(record_property, 5, ok, f"two linear SDDE runs, all grid t: max (1+2E|X|^2 - 3 SE) / bound = {worst:.3f}")


def test_criterion_6_propagation_of_chaos(chaos_report, record_property):
    r = chaos_report
    gaps = ", ".join(f"{e.N}:{e.gap:.3e}" for e in r.entries)
    ok = r.strictly_decreasing and r.slope_ok
    report(record_property, 6, ok, f"gaps {gaps}; pairwise decrease {r.decreasing()}; "
                                   f"slope {r.slope:.3f} +- {r.slope_se:.3f} in {list(r.band)}")


def test_criterion_7_coupling_nullity(chaos_report, record_property):
    lay = two_cell_layout(16)
    ok = True
    for model in (FhnModel(FhnParameters(A1=0.0, A2=0.0, eta0=0.0), lay.cells), ZeroModel(d=2, x0_sd=1.0)):
        om = DisorderSample(np.array([0.3]), HypothesisRates.constant())
        net = simulate_network(lay, model, FHN_GRID, om, 9, replicas=np.arange(16))
        mf = simulate_mean_field(lay, model, FHN_GRID, 64, om, 9, replicas=np.arange(16)).ensemble
        g = coupled_gap(net, mf)
        ok &= bool(np.all(g.sq == 0.0))
    coupled = FhnModel(FhnParameters(), lay.cells)
    om = coupled.disorder_sample([0.3])
    g = coupled_gap(simulate_network(lay, coupled, FHN_GRID, om, 9, replicas=np.arange(16)),
                    simulate_mean_field(lay, coupled, FHN_GRID, 64, om, 9, replicas=np.arange(16)).ensemble)
    init_ok = g.initial_window_max == 0.0 and chaos_report.initial_window_exact
    report(record_property, 7, ok and init_ok,
           f"zero interaction gap identically 0: {ok}; gap on [-tau, 0] identically 0 in every coupled run: {init_ok}")


def test_criterion_8_spatial_continuity(record_property):
    lay = two_cell_layout(2)
    model = FhnModel(FhnParameters(lambda1_spread=0.05), lay.cells)
    grid = TimeGrid(0.5, 25, 1.0)
    ok, worst = True, 0.0
    for d, w in enumerate(NORMAL.sample_many(8, np.arange(4))):
        om = model.disorder_sample(w)
        law = simulate_law(lay, model, grid, 1024, om, 300 + d, probes=[[0.05], [0.45], [0.55], [0.95]])
        tab = bounds_table(law, lay, model, om, eps=0.05)
        ok &= bool(np.all(tab.continuity_ok))
        worst = max(worst, float(np.max((tab.pair_gap - 3 * tab.pair_gap_se) / tab.c2_eps)))
    report(record_property, 8, ok, f"4 draws, same-cell probe pairs, t <= 1: max (gap - 3 SE) / (C2 eps) = {worst:.2e}")


def test_criterion_9_fast_path_equivalence(record_property):
    lay = homogeneous_layout(64)
    model = FhnModel(FhnParameters(A1=1.0, A2=0.5, eta0=0.2))
    om = model.disorder_sample([0.4])
    a = simulate_network(lay, model, FHN_GRID, om, 17, replicas=np.arange(4), method="fast")
    b = simulate_network(lay, model, FHN_GRID, om, 17, replicas=np.arange(4), method="direct")
    rel = float(np.max(np.abs(a.values - b.values) / np.maximum(np.abs(b.values), 1.0)))
    report(record_property, 9, rel < 1e-12, f"N = 64, T = 2, 4 replicas: max |fast - direct| / max(|direct|, 1) = {rel:.2e}")


def test_criterion_10_hypothesis_audit(record_property):
    two = two_cell_layout(8)
    presets = [
        ("fhn", FhnModel(), homogeneous_layout(8), NORMAL),
        ("fhn two-cell", FhnModel(FhnParameters(lambda1_spread=0.05), two.cells), two, NORMAL),
        ("fhn single path", build_sdde("fhn"), None, NORMAL),
        ("linear network", LinearNetwork(LinearParameters(b_delay=0.5)), None, None),
        ("linear sdde", LinearSdde(LinearParameters(b_delay=0.5)), None, None),
        ("zero", ZeroModel(d=2), None, None),
        ("electrical", ElectricalCoupling(1.5), None, None),
    ]
    ok, worst = True, 0.0
    for i, (name, m, lay, dis) in enumerate(presets):
        sampler = default_sampler(m, lay, dis, seed=i)
        for rep in (check_monotonicity(m, sampler, 10_000), check_growth(m, sampler, 10_000)):
            ok &= rep.ok
            worst = max(worst, rep.max_violation)
    cx = max(check_monotonicity(Counterexample(), trials=10_000).max_violation,
             check_growth(Counterexample(), trials=10_000).max_violation)
    ok &= cx > 0
    report(record_property, 10, ok, f"{len(presets)} presets, 1e4 samples: max violation {worst:.1e}; "
                                    f"counterexample violation {cx:.2e}")


NETWORK_TOML = """
[grid]
tau = 0.5
n = 10
T = 1.0
[layout]
kind = "two-cell"
N = 12
[model]
id = "fhn"
params = { lambda1_spread = 0.05 }
[noise]
seed = 77
[disorder]
distribution = "normal"
[run]
replicas = 40
M = 64
probes = [[0.1], [0.4]]
eps = 0.05
[study]
N = [4, 8]
replicas = 8
draws = 2
M = 32
[audit]
trials = 2000
draws = 32
"""


def test_criterion_11_thread_determinism(tmp_path, record_property):
    cfg = tmp_path / "run.toml"
    cfg.write_text(NETWORK_TOML)
    same, compared = True, 0
    for cmd in ("simulate", "meanfield", "chaos-study", "audit"):
        dirs = []
        for th in (1, 2, 4):
            out = tmp_path / f"{cmd}-{th}"
            assert cli_run([cmd, "--config", str(cfg), "--threads", str(th), "--out", str(out)]) == 0
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        for name in names:
            if name == "manifest.json":
                m = [stable_manifest(load_manifest(d / name)) for d in dirs]
                same &= all(x == m[0] for x in m[1:])
            else:
                ref = (dirs[0] / name).read_bytes()
                same &= all((d / name).read_bytes() == ref for d in dirs[1:])
            compared += 1
    report(record_property, 11, same, f"{compared} output files across 4 commands, threads 1/2/4: "
                                      f"byte-identical (manifest up to its wall-clock field)")
