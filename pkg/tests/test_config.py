import pytest

from jumpfield.config import SCHEMA, load_config, parse_config
from jumpfield.core import ConfigError


def test_minimal_config_fills_defaults():
    cfg = parse_config('[model]\nid = "zero"\n')
    assert cfg.model_id == "zero"
    assert cfg.grid.tau == 1.0 and cfg.grid.n == 10 and cfg.grid.horizon == 1.0
    assert cfg.seed == 0
    assert cfg["run"]["mode"] == "network"
    assert set(cfg.sections) == set(SCHEMA)
    assert cfg.delay_measure is None


def test_digest_tracks_text():
    assert parse_config("[noise]\nseed = 1\n").digest != parse_config("[noise]\nseed = 2\n").digest


@pytest.mark.parametrize("text, where", [
    ("[grid]\nfoo = 1\n", "grid.foo"),
    ("[gird]\ntau = 1\n", "gird"),
    ('[grid]\nn = "ten"\n', "grid.n"),
    ("[run]\nexclude_self = 1\n", "run.exclude_self"),
    ('[run]\nmode = "ode"\n', "run.mode"),
    ('[layout]\nkind = "ring"\n', "layout.kind"),
    ("[delay_measure]\noffsets = [0.0, -1.0]\nweights = [0.9, 0.2]\n", "delay_measure.weights"),
    ("[delay_measure]\noffsets = [0.0]\n", "delay_measure"),
    ('[disorder]\ndistribution = "lognormal"\n', "disorder.distribution"),
    ("[grid]\ntau = 1.0\nn = 10\nT = 1.0\n[delay_measure]\noffsets = [-0.25]\nweights = [1.0]\n",
     "delay_measure"),
    ("[grid\n", "malformed"),
])
def test_errors_name_the_key(text, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        parse_config(text)


def test_unknown_model_parameter():
    cfg = parse_config('[model]\nid = "fhn"\nparams = { lambda9 = 1.0 }\n')
    with pytest.raises(ConfigError, match="model.lambda9"):
        cfg.model()


def test_fhn_network_layout():
    cfg = parse_config('[layout]\nN = 64\n[model]\nid = "fhn"\n')
    lay = cfg.layout()
    assert lay.N == 64 and list(lay.weights) == [64.0]
    assert cfg.layout(128).N == 128


def test_lattice_layout_cells():
    cfg = parse_config('[layout]\nkind = "lattice"\nN = [3, 5]\nP = 2\n'
                       'cells = [{ lo = [0.0], hi = [1.0], mass = 1.0 },'
                       ' { population = 1, lo = [1.0], hi = [2.0], mass = 1.0 }]\n')
    lay = cfg.layout()
    assert lay.N == 8 and lay.population_counts().tolist() == [3, 5]
    cfg.sections["layout"]["P"] = 1
    with pytest.raises(ConfigError, match="one entry per population"):
        cfg.layout()
    bad = parse_config('[layout]\nkind = "lattice"\nN = [3]\ncells = [{ lo = [0.0], hi = [1.0] }]\n')
    with pytest.raises(ConfigError, match=r"layout\.cells\[0\]\.mass"):
        bad.layout()


def test_delay_measure_attached_to_model():
    cfg = parse_config('[grid]\ntau = 1.0\nn = 4\n[model]\nid = "linear"\n'
                       '[delay_measure]\noffsets = [0.0, -0.5]\nweights = [0.25, 0.75]\n')
    assert cfg.model().delay_measure(1.0).weights == (0.25, 0.75)


def test_explicit_disorder_value_and_draws():
    cfg = parse_config('[disorder]\ndistribution = "normal"\nvalue = [0.4]\n')
    assert cfg.omega().tolist() == [0.4]
    assert cfg.omega(3).shape == (1,)
    assert cfg.omega(3).tolist() != cfg.omega(4).tolist()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.toml")


def test_shipped_configs_parse():
    import pathlib
    root = pathlib.Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.toml"))
    assert files
    for f in files:
        cfg = load_config(f)
        cfg.model(cfg.layout().cells)
