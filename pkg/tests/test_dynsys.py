import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import bisect

from scalerc.analysis import acf
from scalerc.dynsys import (
    DivergenceError,
    IkedaParams,
    KsParams,
    MgParams,
    ScalarSeries,
    SpatioTemporalField,
    default_history,
    integrate_dde,
    integrate_ikeda,
    integrate_ks,
    integrate_mackey_glass,
    ks_initial_field,
    ks_transient_episodes,
    settling_index,
)


def test_mg_unit_fixed_point():
    x = integrate_mackey_glass(MgParams(tau=100), history=1.0, n_transient=0, n_samples=10_000).values
    assert np.max(np.abs(x - 1.0)) < 1e-6


def test_mg_and_ikeda_zero_history():
    assert np.all(integrate_mackey_glass(history=0.0, n_transient=0, n_samples=2000).values == 0.0)
    assert np.all(integrate_ikeda(history=0.0, n_transient=0, n_samples=2000).values == 0.0)


def test_ikeda_nontrivial_fixed_point():
    p = IkedaParams(tau=1.0)
    s_star = bisect(lambda s: s - p.T0 * p.beta * math.sin(s) ** 2, 1.0, 2.5, xtol=1e-14)
    assert abs(s_star - 2.25) < 0.05
    x = integrate_ikeda(p, history=s_star, n_transient=0, n_samples=1000).values
    assert np.max(np.abs(x - s_star)) < 1e-5


def test_mg100_is_chaotic_with_delay_echo(mg100):
    # the echo of the delayed feedback is the strongest correlation away from lag 0
    r = acf(mg100, 200)
    assert 95 <= 50 + int(np.argmax(np.abs(r[50:151]))) <= 115


def test_step_halving_converges():
    p = MgParams(tau=5)
    a = integrate_mackey_glass(p, history=0.5, n_transient=0, n_samples=1000, h=0.1).values
    b = integrate_mackey_glass(p, history=0.5, n_transient=0, n_samples=1000, h=0.05).values
    assert np.max(np.abs(a - b)) < 1e-4


def test_tau_must_be_multiple_of_step():
    with pytest.raises(ValueError):
        integrate_mackey_glass(MgParams(tau=10.05), n_samples=10)


def test_divergence_names_step():
    # a history that blows up under a huge negative feedback exponent
    with pytest.raises(DivergenceError) as info:
        integrate_dde(MgParams(tau=1.0, a=1e308, p=1.0), history=1e300, n_transient=0, n_samples=100)
    assert info.value.step >= 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), tau=st.sampled_from([17.0, 30.0, 100.0]))
def test_dde_deterministic(seed, tau):
    a = integrate_mackey_glass(MgParams(tau=tau), n_transient=100, n_samples=200, seed=seed).values
    b = integrate_mackey_glass(MgParams(tau=tau), n_transient=100, n_samples=200, seed=seed).values
    assert np.array_equal(a, b)


def test_default_history_contract():
    assert np.ptp(default_history("constant-plus-noise", 0.0, seed=5)) == 0
    a = default_history("uniform-random", 1.0, seed=5)
    assert np.array_equal(a, default_history("uniform-random", 1.0, seed=5))
    assert not np.array_equal(a, default_history("uniform-random", 1.0, seed=6))
    mg = default_history("mackey-glass", seed=0)
    assert 0.8 <= mg.min() and mg.max() <= 1.0
    with pytest.raises(ValueError):
        default_history("constant-plus-noise", -1.0)


def test_series_types_validate():
    with pytest.raises(ValueError):
        ScalarSeries(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        ScalarSeries(np.array([1.0]), dt=0.0)
    with pytest.raises(ValueError):
        SpatioTemporalField(np.zeros((99, 3)), 10 * math.pi)
    assert KsParams.from_size(7).Q == 70


def test_ks_zero_field_stays_zero():
    f = integrate_ks(KsParams(), init=np.zeros(100), n_transient=0, n_samples=200)
    assert np.all(f.grid == 0.0)


def test_ks_small_domain_decays():
    rng = np.random.default_rng(0)
    y0 = 1e-2 * rng.standard_normal(10)
    y0 -= y0.mean()
    f = integrate_ks(KsParams(L=math.pi), init=y0, n_transient=0, n_samples=400)
    peak = np.max(np.abs(f.grid), axis=0)
    assert np.all(np.diff(peak) <= 1e-15)
    assert peak[-1] < 1e-6


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10_000), n_pi=st.sampled_from([7, 10, 14]))
def test_ks_preserves_zero_mean(seed, n_pi):
    f = integrate_ks(KsParams.from_size(n_pi), n_transient=0, n_samples=400, seed=seed)
    assert np.max(np.abs(f.grid.mean(axis=0))) < 1e-8


def test_ks_initial_field_shape():
    y = ks_initial_field(100, seed=2)
    assert y.shape == (100,)
    assert abs(np.max(np.abs(y)) - 0.5) < 1e-12
    assert abs(y.mean()) < 1e-12


def test_ks_chaos_at_14pi():
    f = integrate_ks(KsParams.from_size(14), n_transient=1000, n_samples=2000, seed=0)
    assert settling_index(f.grid) is None
    assert np.std(f.grid) > 0.5


def test_settling_index():
    grid = np.zeros((4, 500))
    grid[:, :100] = np.random.default_rng(0).standard_normal((4, 100))
    assert settling_index(grid) == 100
    assert settling_index(np.random.default_rng(1).standard_normal((4, 500))) is None


def test_ks_episodes_are_unsettled():
    eps = ks_transient_episodes(KsParams(), n_samples=600, seed=0, max_length=2000)
    assert sum(e.n_times for e in eps) >= 600
    for e in eps:
        assert e.Q == 100 and e.n_times >= 300
        assert settling_index(e.grid) is None
