import json
import os
import subprocess
import sys

import pytest

from jumpfield.cli import EXIT_BLOWUP, EXIT_CHECK, EXIT_CONFIG, EXIT_OK, OUT_ENV, run
from jumpfield.io import load_manifest, read_table, stable_manifest

NETWORK = """
[grid]
tau = 0.5
n = 5
T = 1.0
[layout]
N = 6
[model]
id = "fhn"
[noise]
seed = 5
[disorder]
distribution = "normal"
[run]
replicas = 20
"""


def _cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_network_run_is_thread_independent(tmp_path):
    cfg = _cfg(tmp_path, NETWORK)
    outs = []
    for th in (1, 2, 4):
        out = tmp_path / f"t{th}"
        assert run(["simulate", "--config", cfg, "--threads", str(th), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for name in ("trajectories.tsv", "moments.tsv"):
        ref = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == ref for o in outs[1:])
    mans = [stable_manifest(load_manifest(o / "manifest.json")) for o in outs]
    assert mans[0] == mans[1] == mans[2]
    assert mans[0]["outputs"] == ["moments.tsv", "trajectories.tsv"]
    meta, cols, data = read_table(outs[0] / "trajectories.tsv")
    assert cols == ["t", "replica", "particle", "x0", "x1"]
    assert data.shape == (16 * 20 * 6, 5)
    assert meta["seed"] == 5


def test_seed_override_changes_output(tmp_path):
    cfg = _cfg(tmp_path, NETWORK)
    run(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    run(["simulate", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/trajectories.tsv").read_bytes() != (tmp_path / "b/trajectories.tsv").read_bytes()
    assert load_manifest(tmp_path / "b/manifest.json")["run_seed"] == 6


def test_out_dir_from_environment(tmp_path, monkeypatch):
    cfg = _cfg(tmp_path, NETWORK)
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert run(["simulate", "--config", cfg]) == EXIT_OK
    assert (tmp_path / "env_out" / "manifest.json").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, "[grid]\nbogus = 1\n")
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "grid.bogus" in capsys.readouterr().err
    assert run(["simulate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert run(["simulate", "--config", _cfg(tmp_path, NETWORK, "ok.toml"), "--threads", "0"]) == EXIT_CONFIG


def test_blow_up_exit_code(tmp_path, capsys):
    cfg = _cfg(tmp_path, NETWORK.replace("seed = 5", "seed = 5\nr_guard = 1e-3"))
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_BLOWUP
    assert "particle" in capsys.readouterr().err


def test_counterexample_audit_fails_check(tmp_path):
    cfg = _cfg(tmp_path, '[model]\nid = "counterexample"\n[audit]\ntrials = 500\ndraws = 4\n')
    assert run(["audit", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run(["audit", "--config", cfg, "--out", str(tmp_path / "b"), "--check"]) == EXIT_CHECK
    meta, cols, _ = read_table(tmp_path / "b" / "audit.tsv")
    assert cols[0] == "kind" and "integrability_estimate" in meta


def test_fhn_audit_passes_check(tmp_path):
    cfg = _cfg(tmp_path, NETWORK + "[audit]\ntrials = 1000\ndraws = 16\n")
    assert run(["audit", "--config", cfg, "--out", str(tmp_path / "a"), "--check"]) == EXIT_OK


def test_sdde_moments_with_check(tmp_path):
    cfg = _cfg(tmp_path, '[grid]\ntau = 0.1\nn = 2\nT = 1.0\n[model]\nid = "linear"\n'
                         '[run]\nmode = "sdde"\nreplicas = 500\nrecord = "moments"\n')
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "m"), "--check"]) == EXIT_OK
    _, cols, data = read_table(tmp_path / "m" / "moments.tsv")
    assert cols[:3] == ["t", "second_moment", "se"] and data.shape[0] == 23
    assert run(["simulate", "--mode", "sdde", "--config", _cfg(tmp_path, NETWORK, "n.toml"),
                "--out", str(tmp_path / "f")]) == EXIT_OK
    assert (tmp_path / "f" / "trajectories.tsv").exists()


def test_meanfield_and_chaos_commands(tmp_path):
    mf = NETWORK.replace("[run]\nreplicas = 20", "[run]\nreplicas = 2\nM = 32\nprobes = [[0.2], [0.3]]\neps = 0.1")
    assert run(["meanfield", "--config", _cfg(tmp_path, mf), "--out", str(tmp_path / "mf"), "--check"]) == EXIT_OK
    _, cols, _ = read_table(tmp_path / "mf" / "bounds.tsv")
    assert "C1" in cols and "probe_gap" in cols
    st = NETWORK + "[study]\nN = [2, 4]\nreplicas = 4\ndraws = 2\nM = 16\n"
    assert run(["chaos-study", "--config", _cfg(tmp_path, st, "s.toml"), "--out", str(tmp_path / "cs")]) == EXIT_OK
    rep = json.loads((tmp_path / "cs" / "chaos.json").read_text())
    assert [e["N"] for e in rep["entries"]] == [2, 4]


def test_list_models(capsys):
    assert run(["list-models"]) == EXIT_OK
    out = capsys.readouterr().out
    for mid in ("fhn", "linear", "zero", "electrical", "counterexample"):
        assert f"{mid}:" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "jumpfield", "list-models"], capture_output=True, text=True)
    assert res.returncode == 0 and "fhn:" in res.stdout
    with pytest.raises(SystemExit):
        run(["--help"])
