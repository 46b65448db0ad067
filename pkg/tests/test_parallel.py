import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scalerc.analysis import nrmse
from scalerc.dynsys import KsParams, SpatioTemporalField, integrate_ks
from scalerc.parallel import (
    KS_DESK,
    ParallelParams,
    assemble_inputs,
    input_indices,
    run_closed_loop_parallel,
    run_open_loop_parallel,
    scale_parallel,
    synchronize,
    train_parallel,
)

SMALL = replace(KS_DESK, G=14, K=200, sparsity=0.02, n_init=100, n_train=1500)


@pytest.fixture(scope="module")
def ks14():
    return integrate_ks(KsParams.from_size(14), n_transient=500, n_samples=2200, seed=1)


@pytest.fixture(scope="module")
def model14(ks14):
    return train_parallel(SpatioTemporalField(ks14.grid[:, :1601], ks14.L), SMALL)


def test_index_examples():
    assert list(input_indices(100, 0)) == [97, 98, 99] + list(range(10)) + [10, 11, 12]
    assert list(input_indices(100, 5)) == [47, 48, 49] + list(range(50, 60)) + [60, 61, 62]
    assert list(input_indices(20, 1)) == [7, 8, 9] + list(range(10, 20)) + [0, 1, 2]


def test_assemble_inputs_checks():
    p = ParallelParams(G=2)
    col = np.arange(20.0)
    assert list(assemble_inputs(col, 1, p)) == [7, 8, 9] + list(range(10, 20)) + [0, 1, 2]
    with pytest.raises(ValueError):
        assemble_inputs(np.arange(30.0), 0, p)
    with pytest.raises(ValueError):
        assemble_inputs(col, 2, p)
    with pytest.raises(ValueError):
        ParallelParams(G=1)
    assert p.M == 16


def test_shared_readout(model14):
    assert model14.readout.shape == (10, 200)
    assert model14.states.shape == (200, 14)
    assert model14.output_dim == 140
    assert model14.L == pytest.approx(14 * math.pi)


def test_open_loop_accuracy(model14, ks14):
    tail = SpatioTemporalField(ks14.grid[:, 1500:], ks14.L)
    m = synchronize(model14, SpatioTemporalField(ks14.grid[:, 1400:1501], ks14.L))
    pred = run_open_loop_parallel(m, tail)
    assert nrmse(pred.grid, tail.grid[:, 1:]) < 0.1


def test_zero_field_gives_zero_readout():
    p = replace(SMALL, G=2, n_train=300)
    model = train_parallel(np.zeros((20, 401)), p)
    out = run_open_loop_parallel(model, np.zeros((20, 50)))
    assert np.max(np.abs(out.grid)) < 1e-6


def test_silent_network_outputs_zero(model14):
    quiet = replace(model14, params=replace(model14.params, gamma=0.0, bias_gain=0.0),
                    states=np.zeros_like(model14.states))
    assert np.all(run_closed_loop_parallel(quiet, 50).grid == 0.0)


def test_closed_loop_deterministic(model14):
    a = run_closed_loop_parallel(model14, 200).grid
    b = run_closed_loop_parallel(model14, 200).grid
    assert np.array_equal(a, b)


@settings(max_examples=6, deadline=None)
@given(shift=st.integers(1, 13))
def test_translation_equivariance(model14, ks14, shift):
    base = synchronize(model14, ks14)
    rolled = replace(base, states=np.roll(base.states, shift, axis=1))
    a = run_closed_loop_parallel(base, 100).grid
    b = run_closed_loop_parallel(rolled, 100).grid
    assert np.array_equal(np.roll(a, 10 * shift, axis=0), b)


def test_training_from_shifted_field_is_equivariant(ks14):
    p = replace(SMALL, n_train=400, noise_std=0.0)
    a = train_parallel(SpatioTemporalField(ks14.grid[:, :501], ks14.L), p)
    b = train_parallel(SpatioTemporalField(np.roll(ks14.grid[:, :501], 10, axis=0), ks14.L), p)
    # pooled samples arrive in a different order, so only round-off may differ
    assert np.allclose(a.readout, b.readout, rtol=1e-6, atol=1e-8)
    assert np.array_equal(np.roll(a.states, 1, axis=1), b.states)


def test_scale_parallel(model14):
    same = scale_parallel(model14, 14)
    assert np.array_equal(same.states, model14.states)
    small = scale_parallel(model14, 7)
    assert small.output_dim == 70 and small.L == pytest.approx(7 * math.pi)
    big = scale_parallel(model14, 20)
    assert big.output_dim == 200 and np.array_equal(big.states[:, 14:], model14.states[:, :6])
    for m in (small, big):
        assert np.array_equal(m.readout, model14.readout)
        assert m.weights.equals(model14.weights)
        assert m.trained_G == 14
    with pytest.raises(ValueError):
        scale_parallel(model14, 1)
    assert run_closed_loop_parallel(small, 20).grid.shape == (70, 20)


def test_episode_training(ks14):
    eps = [SpatioTemporalField(ks14.grid[:, i:i + 400], ks14.L) for i in (0, 800)]
    p = replace(SMALL, n_train=1)
    m = train_parallel(eps, p)
    assert m.readout.shape == (10, 200)
    # a single long field must cover n_init + n_train + 1 columns
    with pytest.raises(ValueError, match="at least"):
        train_parallel(eps[0], replace(SMALL, n_train=1000))
    with pytest.raises(ValueError, match="washout"):
        train_parallel(eps[:1] * 2, replace(SMALL, n_init=500))
