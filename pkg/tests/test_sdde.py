import math

import numpy as np
import pytest

from jumpfield.coefficients import SddeCoefficients
from jumpfield.core import BlowUpError, DisorderSample, GaussianInitialLaw, HypothesisRates, TimeGrid
from jumpfield.noise import JumpBatch, NoiseStreamKey, StreamKind
from jumpfield.presets import LinearParameters, LinearSdde, linear_oracle_model
from jumpfield.sdde import SddeState, StepNoise, euler_step, sdde_moment_bound, simulate_sdde, simulate_sdde_paths

OM = DisorderSample(np.zeros(1), HypothesisRates.constant())


class Zero(SddeCoefficients):
    def __init__(self, c):
        super().__init__(GaussianInitialLaw([c], [[0.0] * len(c)]))
        self.d = len(c)


class PureJump(SddeCoefficients):
    nu_total = 2.0

    def h(self, t, seg, om, xi):
        return np.ones((seg.shape[0], 1))

    def h_compensator(self, t, seg, om):
        return np.full((seg.shape[0], 1), self.nu_total)


def test_zero_dynamics_constant():
    g = TimeGrid(0.3, 3, 2.0)
    tr = simulate_sdde(Zero([1.5, -2.0]), g, OM, NoiseStreamKey(1, StreamKind.W_LOCAL, 0))
    assert tr.shape == (g.num_steps + 1, 2)
    assert np.all(tr == np.array([1.5, -2.0]))


def test_linear_decay_against_closed_form():
    p = LinearParameters(a=1.0, sigma=0.0, c_jump=0.0, nu_total=0.0, x0=1.0)
    g = TimeGrid(0.01, 1, 1.0)
    tr = simulate_sdde(LinearSdde(p), g, OM, NoiseStreamKey(0, StreamKind.W_LOCAL, 0))
    assert tr[-1, 0] == pytest.approx(0.99 ** 100, rel=1e-12)
    assert abs(tr[-1, 0] - math.exp(-1)) <= 0.01 * math.exp(-1) * 2


def test_pure_jump_martingale_mean():
    g = TimeGrid(0.01, 1, 1.0)
    pm = simulate_sdde_paths(PureJump(), g, OM, 3, np.arange(100_000), record="moments")
    assert abs(pm.mean[-1, 0]) <= 3 * math.sqrt(2.0) / math.sqrt(100_000)


def test_full_and_moment_records_agree():
    m = linear_oracle_model(b_delay=0.4).sdde
    g = TimeGrid(0.2, 4, 1.0)
    tr = simulate_sdde_paths(m, g, OM, 9, np.arange(50))
    pm = simulate_sdde_paths(m, g, OM, 9, np.arange(50), record="moments")
    assert np.allclose(pm.mean[:, 0], tr[:, :, 0].mean(axis=1), rtol=0, atol=1e-12)
    assert np.allclose(pm.sq_mean, (tr[:, :, 0] ** 2).mean(axis=1), rtol=1e-12)


def test_paths_depend_only_on_key():
    m = linear_oracle_model().sdde
    g = TimeGrid(0.1, 2, 0.5)
    batch = simulate_sdde_paths(m, g, OM, 5, [3, 7, 11])
    single = simulate_sdde(m, g, OM, NoiseStreamKey(5, StreamKind.W_LOCAL, 0, 0, 7))
    assert np.array_equal(batch[:, 1], single)


def test_blow_up_guard_reports_step():
    g = TimeGrid(0.1, 1, 1.0)
    m = LinearSdde(LinearParameters(a=1.0, b_delay=3.0, sigma=0.0, c_jump=0.0, nu_total=0.0, x0=10.0))
    with pytest.raises(BlowUpError) as err:
        simulate_sdde_paths(m, g, OM, 0, [0], r_guard=9.5)
    assert err.value.step == 1


def test_euler_step_uses_left_endpoint_segment():
    # f uses the oldest window value: X_{k+1} = X_k + dt * X_{k-n}
    class Delay(SddeCoefficients):
        def f(self, t, seg, om):
            return seg[:, 0]

    g = TimeGrid(1.0, 2, 2.0)
    st = SddeState.from_initial(g, np.array([[[1.0], [2.0], [3.0]]]))
    xs = []
    for _ in range(3):
        euler_step(st, Delay(), StepNoise(np.zeros((1, 1)), JumpBatch.empty()), OM)
        xs.append(st.current[0, 0])
    assert xs == [3.5, 4.5, 6.0]


def test_strong_convergence_coupled_refinement():
    # Ornstein-Uhlenbeck, shared Brownian path on dt, dt/2, dt/4
    a, T, K = 1.0, 1.0, 4000
    rng = np.random.default_rng(7)
    fine = 64
    dW = rng.standard_normal((fine, K)) * math.sqrt(T / fine)

    def run(level):
        steps = fine // level
        inc = dW.reshape(steps, level, K).sum(axis=1)
        x = np.ones(K)
        h = T / steps
        for k in range(steps):
            x = x - a * x * h + inc[k]
        return x

    x16, x32, x64 = run(4), run(2), run(1)
    g1 = math.sqrt(np.mean((x16 - x32) ** 2))
    g2 = math.sqrt(np.mean((x32 - x64) ** 2))
    assert 1.2 <= g1 / g2 <= 2.1


def test_moment_bound_helper():
    rates = HypothesisRates.constant(K=1.0)
    assert sdde_moment_bound(0.0, 2.0, rates) == 5.0
    assert sdde_moment_bound(1.0, 0.0, rates) == pytest.approx(math.exp(2.0))


def test_path_moment_standard_errors():
    from jumpfield.sdde import _MomentAccumulator

    rng = np.random.default_rng(0)
    x = rng.normal(2.0, 3.0, size=(200_000, 1))
    acc = _MomentAccumulator(1, 1)
    acc.add(0, x)
    pm = acc.result(np.zeros(1), x.shape[0])
    assert pm.mean_se[0, 0] == pytest.approx(3.0 / math.sqrt(x.shape[0]), rel=0.01)
    # Gaussian: Var(s^2) ~ 2 sigma^4 / n
    assert pm.var_se[0, 0] == pytest.approx(math.sqrt(2 / x.shape[0]) * 9.0, rel=0.02)
