import math

import numpy as np
import pytest

from jumpfield.checks import check_growth, check_monotonicity, default_sampler
from jumpfield.coefficients import DisorderDistribution
from jumpfield.core import ConfigError, Sites, two_cell_layout
from jumpfield.presets import (MODELS, Counterexample, ElectricalCoupling, FhnModel, FhnParameters, LinearNetwork,
                               LinearParameters, LinearSdde, ZeroModel, build_model, build_sdde, catalogue,
                               delay_ode_mean, delay_ode_mean_euler, linear_oracle_model)


def _site(pos=0.5, cell=0):
    return Sites(np.array([[pos]]), np.array([cell]), np.array([0]))


def test_fhn_local_drift_example():
    m = FhnModel()
    x = np.array([[1.0, 0.0]])
    assert np.allclose(m.f(0.0, _site(), x, np.zeros(1)), [[7 / 6, 0.08 * 1.7]], rtol=0, atol=1e-15)
    assert m.f(0.0, _site(), x, np.ones(1))[0, 0] == pytest.approx(7 / 6 + 0.1, abs=1e-15)
    assert np.array_equal(m.g(0.0, _site(), x, None)[0], [[0.5], [0.0]])


def test_fhn_spread_shifts_lambda1():
    lay = two_cell_layout(2)
    m = FhnModel(FhnParameters(lambda1_spread=0.05), lay.cells)
    lam = m.lambda1(Sites(np.array([[0.05], [0.25], [0.95]]), np.array([0, 0, 1]), np.zeros(3, np.int64)),
                    np.zeros(1))
    assert np.allclose(lam, [0.5 - 0.02, 0.5, 0.5 + 0.02], rtol=0, atol=1e-15)


def test_fhn_interaction_example():
    m = FhnModel(FhnParameters(A1=1.0, A2=0.5, eta0=0.2))
    x = np.array([[2.0, 0.3]])
    seg = np.zeros((1, 3, 2))
    seg[0, 0, 0] = 0.5
    s = _site()
    assert np.allclose(m.theta(0, s, s, x, seg, None), [[-1.5, 0.0]])
    assert np.allclose(m.beta(0, s, s, x, seg, None)[0, :, 0], [-0.75, 0.0])
    assert np.allclose(m.eta(0, s, s, x, seg, None, np.array([2.0])), [[-0.6, 0.0]])
    assert np.allclose(m.eta_compensator(0, s, s, x, seg, None), [[-0.3, 0.0]])
    assert m.eta_sq_moment(0, s, s, x, seg, None)[0] == pytest.approx(2 * 0.09)


def test_fhn_parameter_validation():
    with pytest.raises(ConfigError, match="lambda3"):
        FhnParameters(lambda3=0.0)
    with pytest.raises(ConfigError, match="A1"):
        FhnModel(FhnParameters(A1=[[1.0, 0.0]]), two_cell_layout(2).cells)


def test_delay_ode_mean_first_window_closed_form():
    a, b, x0 = 1.0, 0.5, 2.0
    t = np.array([-0.5, 0.0, 0.3, 0.9])
    ref = b * x0 / a + (x0 - b * x0 / a) * np.exp(-a * np.maximum(t, 0))
    assert np.allclose(delay_ode_mean(a, b, x0, 1.0, t), ref, rtol=1e-10)
    assert np.allclose(delay_ode_mean(a, 0.0, x0, 1.0, t), x0 * np.exp(-a * np.maximum(t, 0)), rtol=1e-14)


def test_delay_ode_euler_converges():
    exact = delay_ode_mean(1.0, 0.7, 1.0, 1.0, np.array([3.0]))[0]
    errs = [abs(delay_ode_mean_euler(1.0, 0.7, 1.0, 1.0, n, 3 * n)[-1] - exact) for n in (50, 100, 200)]
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


def test_linear_oracle_variance():
    o = linear_oracle_model(a=2.0, sigma=1.0, c_jump=0.5, nu_total=4.0, x0_sd=0.3)
    assert o.stationary_variance() == pytest.approx(0.5)
    assert o.variance(0.0) == pytest.approx(0.09)
    assert o.variance(50.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        linear_oracle_model(b_delay=1.0).variance(1.0)


def _all_presets():
    lay = two_cell_layout(8)
    return [
        (FhnModel(FhnParameters(lambda1_spread=0.05), lay.cells), lay, DisorderDistribution("normal")),
        (LinearNetwork(LinearParameters(b_delay=0.5)), None, None),
        (LinearSdde(LinearParameters(b_delay=0.5)), None, None),
        (ZeroModel(d=2), None, None),
        (ElectricalCoupling(1.5), None, None),
        (build_sdde("fhn"), None, None),
    ]


@pytest.mark.parametrize("case", range(6))
def test_presets_satisfy_their_declared_constants(case):
    m, lay, dis = _all_presets()[case]
    sampler = default_sampler(m, lay, dis, seed=case)
    for rep in (check_monotonicity(m, sampler, 2000), check_growth(m, sampler, 2000)):
        assert rep.ok, rep.rows()


def test_counterexample_flagged():
    rep = check_growth(Counterexample(), trials=2000)
    mono = check_monotonicity(Counterexample(), trials=2000)
    assert not rep.ok and not mono.ok
    assert rep.max_violation > 1.0
    assert rep.worst


def test_registry():
    assert {e["id"] for e in catalogue()} == set(MODELS)
    assert isinstance(build_model("fhn", {"A1": 0.3}), FhnModel)
    with pytest.raises(ConfigError, match="unknown model"):
        build_model("nope")
    with pytest.raises(ConfigError, match="model.bogus"):
        build_model("linear", {"bogus": 1})
    assert build_sdde("linear").model_id == "linear"
