import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import sine
from scalerc.analysis import (
    AttractorKind,
    ClassifierConfig,
    acf,
    attractor_projection,
    bifurcation_scan,
    classify_attractor,
    delta_acf,
    divergence_rate,
    extract_extrema,
    largest_lyapunov_dde,
    multistability_census,
    nrmse,
    valid_time,
)
from scalerc.dynsys import IkedaParams, MgParams


def test_nrmse_examples():
    t = np.array([1.0, 2.0, 5.0])
    assert nrmse(t, t) == 0.0
    assert nrmse(np.full(3, t.mean()), t) == pytest.approx(1.0)
    hand = math.sqrt(4.0 / 3.0) / math.sqrt(((1 - 8 / 3) ** 2 + (2 - 8 / 3) ** 2 + (5 - 8 / 3) ** 2) / 3)
    assert nrmse(np.array([1.0, 2.0, 3.0]), t) == pytest.approx(hand, rel=1e-12)
    with pytest.raises(ValueError):
        nrmse(t, np.ones(3))
    with pytest.raises(ValueError):
        nrmse(t, np.ones(4))


def test_acf_examples():
    x = sine(5000, 50)
    r = acf(x, 200)
    assert r[0] == pytest.approx(1.0)
    assert r[50] >= 0.999
    noise = np.random.default_rng(0).standard_normal(20_000)
    assert abs(acf(noise, 10)[10]) < 4 / math.sqrt(noise.size)
    with pytest.raises(ValueError):
        acf(np.ones(100), 10)
    with pytest.raises(ValueError):
        acf(x[:10], 10)


def test_acf_matches_direct_sum():
    x = np.random.default_rng(1).standard_normal(300)
    y = x - x.mean()
    var = y @ y / y.size
    for lag in (0, 1, 7, 50):
        direct = (y[: y.size - lag] @ y[lag:])
        assert acf(x, 60)[lag] == pytest.approx(direct / (y.size - lag) / var, rel=1e-10)
        assert acf(x, 60, "biased")[lag] == pytest.approx(direct / y.size / var, rel=1e-10)


series_st = st.integers(0, 2**31 - 1).map(
    lambda s: np.cumsum(np.random.default_rng(s).standard_normal(1500)))


@settings(max_examples=25, deadline=None)
@given(a=series_st, b=series_st)
def test_delta_acf_pseudometric(a, b):
    d = delta_acf(a, b)
    assert d >= 0
    assert d == delta_acf(b, a)
    assert delta_acf(a, a) == 0.0


def test_delta_acf_constant_penalty():
    x = sine(3000, 40)
    assert delta_acf(np.ones(3000), x) == 1101.0
    assert delta_acf(np.ones(3000), np.full(3000, 2.0)) == 0.0


def test_delta_acf_separates_delays(mg30, mg100):
    assert delta_acf(mg30, mg100) > delta_acf(mg30, mg30.values[::-1].copy())


def test_extrema():
    x = 2.0 * sine(4000, 37.3)
    ext = extract_extrema(x, n_discard=100)
    assert len(ext) > 50 and np.allclose(ext, 2.0, atol=0.02)
    assert extract_extrema(np.full(50, 0.3)) == [0.3]
    assert extract_extrema(np.linspace(0, 1, 50)) == [1.0]


def test_classify_examples(mg100):
    assert classify_attractor(np.full(5000, 1.2)).kind is AttractorKind.FIXED_POINT
    lc = classify_attractor(sine(5000, 73.0))
    assert lc.kind is AttractorKind.LIMIT_CYCLE and abs(lc.period - 73) <= 1
    assert classify_attractor(mg100).kind is AttractorKind.CHAOTIC
    assert classify_attractor(np.array([1.0, np.inf] * 3000)).kind is AttractorKind.DIVERGENT


def test_classify_period_doubled_cycle():
    n = np.arange(8000)
    x = np.sin(2 * np.pi * n / 60) + 0.4 * np.sin(2 * np.pi * n / 120)
    c = classify_attractor(x)
    assert c.kind is AttractorKind.LIMIT_CYCLE and abs(c.period - 120) <= 2


@settings(max_examples=20, deadline=None)
@given(c=st.floats(-10, 10), d=st.floats(-5, 5), which=st.sampled_from(["sine", "mg"]))
def test_classify_affine_invariant(mg100, c, d, which):
    assume(abs(c) > 0.1)
    x = sine(5000, 61.0) if which == "sine" else mg100.values[:5000]
    assert classify_attractor(c * x + d).kind is classify_attractor(x).kind


def test_bifurcation_truth_and_model(small_model):
    diag = bifurcation_scan(MgParams(), [4, 100], steps_per_D=4096)
    kinds = diag.kinds()
    assert kinds[4] is AttractorKind.FIXED_POINT and kinds[100] is AttractorKind.CHAOTIC
    assert len(diag.entries[4].extrema) == 1
    model_diag = bifurcation_scan(small_model, [1, 2, 30], steps_per_D=4096, n_discard=500)
    assert model_diag.entries[1].diverged
    assert set(model_diag.entries) == {1, 2, 30}
    for D, e in model_diag.entries.items():
        if e.attractor.kind is AttractorKind.FIXED_POINT:
            assert len(e.extrema) == 1
    rows = list(model_diag.rows())
    assert rows == sorted(rows, key=lambda r: r[0])


@settings(max_examples=20, deadline=None)
@given(rate=st.floats(0.003, 0.05), phase=st.floats(0, 6))
def test_divergence_rate_recovers_exponent(rate, phase):
    n = np.arange(6000)
    ref = np.sin(0.05 * n + phase) + 0.5 * np.sin(0.013 * n)
    test = ref + 1e-9 * np.exp(rate * n)
    assert divergence_rate(ref, test) == pytest.approx(rate, rel=0.05)


def test_divergence_rate_relative_perturbation():
    n = np.arange(4000)
    ref = 2.0 + np.sin(0.03 * n)
    test = ref * (1 + 1e-9 * np.exp(0.01 * n))
    assert divergence_rate(ref, test) == pytest.approx(0.01, rel=0.05)


def test_divergence_rate_errors():
    x = np.sin(np.arange(1000) * 0.1)
    with pytest.raises(ValueError, match="do not separate"):
        divergence_rate(x, x)
    with pytest.raises(ValueError):
        divergence_rate(x, x[:-1])


def test_valid_time():
    ref = sine(500, 20)
    test = ref.copy()
    test[123:] += 10
    assert valid_time(ref, test) == 123
    assert valid_time(ref, ref) == 500


def test_lyapunov_signs():
    assert largest_lyapunov_dde(MgParams(tau=4), n_renorm=60, n_transient=2000) <= 0
    a = largest_lyapunov_dde(MgParams(tau=30), n_renorm=40, seed=3)
    assert a == largest_lyapunov_dde(MgParams(tau=30), n_renorm=40, seed=3)
    assert a > 0


def test_census_truth():
    low = multistability_census(MgParams(), 30, n_init=4)
    assert low.n_limit_cycle == 0 and low.total == 4
    high = multistability_census(MgParams(), 100, n_init=3)
    assert high.n_chaotic == 3
    ik = multistability_census(IkedaParams(), 3, n_init=2)
    assert ik.n_fixed == 2


def test_census_model(small_model):
    r = multistability_census(small_model, 30, n_init=6, n_steps=4096, n_discard=500, batch=4)
    assert r.total == 6 and r.D == 30
    again = multistability_census(small_model, 30, n_init=6, n_steps=4096, n_discard=500, batch=4)
    assert r == again
    with pytest.raises(ValueError):
        multistability_census(small_model, 30, n_init=0)


def test_projection():
    p = attractor_projection(np.arange(10.0), 3)
    assert p.shape == (7, 2) and np.all(p[:, 0] - p[:, 1] == 3)


def test_classifier_config_threshold():
    x = sine(5000, 50) + 0.05 * np.random.default_rng(0).standard_normal(5000)
    assert classify_attractor(x, ClassifierConfig(lc_threshold=0.999)).kind is AttractorKind.CHAOTIC
    assert classify_attractor(x, ClassifierConfig(lc_threshold=0.9)).kind is AttractorKind.LIMIT_CYCLE
