"""Delayed echo state network: training, rescaling and autonomous continuation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynsys import DivergenceError, ScalarSeries
from .reservoir import DesnParams, WeightSet, generate_weights, ridge_fit, seed_streams

__all__ = [
    "DelayedReservoir",
    "train",
    "set_delay",
    "run_closed_loop",
    "run_open_loop",
    "closed_loop_batch",
    "random_histories",
    "POST_RESCALE_DISCARD",
    "DIVERGENCE_LIMIT",
    "LOOP_OFFSET",
    "line_length",
]

POST_RESCALE_DISCARD = 2000
DIVERGENCE_LIMIT = 1e6
# one sample for the update itself, one for the readout of the delayed state
LOOP_OFFSET = 2
MIN_DELAY = LOOP_OFFSET


def line_length(D: int) -> int:
    """Stored states ``x(n) ... x(n+2-D)`` for loop delay ``D``."""
    if D < MIN_DELAY:
        raise ValueError(f"loop delay must be >= {MIN_DELAY}, got {D}")
    return D - LOOP_OFFSET + 1


@dataclass(frozen=True, eq=False)
class DelayedReservoir:
    """A trained dESN and the delay-line state it continues from.

    ``D`` is the loop delay in samples: in closed loop the output ``y(n+1)``
    is driven through the delayed connections by ``y(n+1-D)``, the same lag
    structure as a delay system sampled with ``tau = D``. The recurrent term
    therefore reads the state ``x(n+2-D)``, and ``history`` has shape
    ``(D - 1, K)``, newest state first. ``trained_D`` records the delay the
    readout was fitted at.
    """

    weights: WeightSet
    readout: np.ndarray
    params: DesnParams
    history: np.ndarray
    trained_D: int

    def __post_init__(self):
        if self.history.shape != (line_length(self.params.D), self.weights.K):
            raise ValueError(
                f"history shape {self.history.shape} does not match D={self.params.D}, K={self.weights.K}"
            )
        if self.readout.shape != (self.weights.K,):
            raise ValueError("readout must have length K")

    @property
    def D(self) -> int:
        return self.params.D

    def output(self) -> float:
        """Current prediction ``W_out x(n)``."""
        return float(self.readout @ self.history[0])


class _Ring:
    """Delay line as a ring buffer over a trailing batch axis."""

    def __init__(self, history: np.ndarray):
        # slot order: newest first in ``history``; the ring keeps newest at ``head``
        self.buf = np.ascontiguousarray(history[::-1])
        self.size = self.buf.shape[0]
        self.head = self.size - 1

    def newest(self) -> np.ndarray:
        return self.buf[self.head]

    def delayed(self) -> np.ndarray:
        return self.buf[(self.head + 1) % self.size]

    def push(self, x: np.ndarray) -> None:
        self.head = (self.head + 1) % self.size
        self.buf[self.head] = x

    def as_history(self) -> np.ndarray:
        order = (self.head - np.arange(self.size)) % self.size
        return self.buf[order].copy()


def _stepper(weights: WeightSet, params: DesnParams):
    W = weights.W
    w_in = params.gamma * weights.W_in[:, 0]
    W_b = weights.W_b
    alpha, beta = params.alpha, params.beta
    batched = None

    def step(ring: _Ring, s):
        x_del = ring.delayed()
        if x_del.ndim == 1:
            drive = W @ x_del + w_in * s + W_b
        else:
            nonlocal batched
            if batched is None:
                batched = (w_in[:, None], W_b[:, None])
            drive = W @ x_del + batched[0] * s + batched[1]
        x = beta * np.tanh(drive)
        if alpha:
            x += alpha * ring.newest()
        ring.push(x)
        return x

    return step


def train(series: ScalarSeries, params: DesnParams = DesnParams(),
          weights: Optional[WeightSet] = None) -> DelayedReservoir:
    """Teacher-forced training of a one-step-ahead readout.

    The reservoir starts from zero and is driven by ``s(n) + xi(n)`` with
    Gaussian ``xi`` of standard deviation ``noise_std``. After ``n_init``
    washout steps, ``n_train`` states ``x(n+1)`` are regressed onto the clean
    next samples ``s(n+1)``.
    """
    s = np.asarray(series.values if isinstance(series, ScalarSeries) else series, dtype=float)
    need = params.n_init + params.n_train + 1
    if s.size < need:
        raise ValueError(f"training needs at least {need} samples, got {s.size}")
    if weights is None:
        weights = generate_weights(params.K, 1, params.sparsity, params.rho,
                                   params.bias_scale, params.seed)
    rng_noise = seed_streams(params.seed, 4)[3]
    n_total = params.n_init + params.n_train
    noisy = s[:n_total] + params.noise_std * rng_noise.standard_normal(n_total)

    ring = _Ring(np.zeros((line_length(params.D), params.K)))
    step = _stepper(weights, params)
    states = np.empty((params.n_train, params.K))
    for n in range(n_total):
        x = step(ring, noisy[n])
        if n >= params.n_init:
            states[n - params.n_init] = x
    targets = s[params.n_init + 1: n_total + 1]
    readout = ridge_fit(states, targets, params.ridge_lambda)[0]
    return DelayedReservoir(weights, readout, params, ring.as_history(), params.D)


def set_delay(model: DelayedReservoir, D_new: int) -> DelayedReservoir:
    """Same weights and readout with loop delay ``D_new``.

    The new line is filled with copies of the newest state; callers discard
    a closed-loop transient before analysing the output.
    """
    n_line = line_length(D_new)
    if D_new == model.D:
        return replace(model, history=model.history.copy())
    history = np.repeat(model.history[:1], n_line, axis=0)
    return replace(model, params=replace(model.params, D=D_new), history=history)


def _closed_loop(model: DelayedReservoir, ring: _Ring, n_steps: int, n_discard: int,
                 record: bool = True) -> np.ndarray:
    step = _stepper(model.weights, model.params)
    readout = model.readout
    y = readout @ ring.newest()
    out = np.empty((n_steps,) + np.shape(y)) if record else None
    for n in range(n_discard + n_steps):
        x = step(ring, y)
        y = readout @ x
        if np.any(np.abs(y) > DIVERGENCE_LIMIT) or not np.all(np.isfinite(y)):
            raise DivergenceError(f"closed-loop output diverged at step {n}", n)
        if record and n >= n_discard:
            out[n - n_discard] = y
    return out


def run_closed_loop(model: DelayedReservoir, n_steps: int, n_discard: int = 0,
                    return_model: bool = False):
    """Autonomous continuation: the prediction is fed back as the next input.

    The model is not modified; with ``return_model`` the advanced model is
    returned alongside the series.
    """
    ring = _Ring(model.history)
    out = _closed_loop(model, ring, n_steps, n_discard)
    series = ScalarSeries(out, 1.0)
    if return_model:
        return series, replace(model, history=ring.as_history())
    return series


def run_open_loop(model: DelayedReservoir, series, n_steps: Optional[int] = None,
                  n_washout: int = 0, return_model: bool = False):
    """Teacher-forced one-step predictions.

    Input ``s(n)`` for ``n < n_washout + n_steps`` is fed from ``series``; the
    returned values predict ``series[n_washout + 1 : n_washout + n_steps + 1]``.
    """
    s = np.asarray(series.values if isinstance(series, ScalarSeries) else series, dtype=float)
    if n_steps is None:
        n_steps = s.size - n_washout - 1
    if s.size < n_washout + n_steps + 1:
        raise ValueError("series too short for the requested open-loop run")
    ring = _Ring(model.history)
    step = _stepper(model.weights, model.params)
    preds = np.empty(n_steps)
    for n in range(n_washout + n_steps):
        x = step(ring, s[n])
        if n >= n_washout:
            preds[n - n_washout] = model.readout @ x
    result = ScalarSeries(preds, 1.0)
    if return_model:
        return result, replace(model, history=ring.as_history())
    return result


def random_histories(model: DelayedReservoir, n: int, seed: int, scale: float = 0.1) -> np.ndarray:
    """``n`` perturbed delay lines, shape ``(D - 1, K, n)``.

    Each line is the model's current delay line with independent uniform
    noise of half-width ``scale`` on every stored state.
    """
    rng = np.random.default_rng(seed)
    base = model.history[:, :, None]
    return base + scale * rng.uniform(-1.0, 1.0, size=base.shape[:2] + (n,))


def closed_loop_batch(model: DelayedReservoir, histories: np.ndarray, n_steps: int,
                      n_discard: int = 0) -> np.ndarray:
    """Run ``B`` independent closed loops in lockstep; returns ``(n_steps, B)``.

    Diverging members are frozen at NaN and reported as NaN columns.
    """
    if histories.shape[:2] != model.history.shape:
        raise ValueError("histories must have shape (D - 1, K, B)")
    ring = _Ring(histories.copy())
    step = _stepper(model.weights, model.params)
    readout = model.readout
    y = readout @ ring.newest()
    out = np.empty((n_steps, histories.shape[2]))
    for n in range(n_discard + n_steps):
        x = step(ring, y)
        y = readout @ x
        bad = ~np.isfinite(y) | (np.abs(y) > DIVERGENCE_LIMIT)
        if bad.any():
            y = np.where(bad, np.nan, y)
        if n >= n_discard:
            out[n - n_discard] = y
    return out
