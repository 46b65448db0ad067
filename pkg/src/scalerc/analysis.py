"""Diagnostics: errors, autocorrelation, attractor classes, bifurcation scans,
divergence rates and multistability counts."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dynsys import (
    DdeParams,
    DdeState,
    DivergenceError,
    IkedaParams,
    MgParams,
    ScalarSeries,
    default_history,
    integrate_dde,
)

__all__ = [
    "nrmse",
    "acf",
    "delta_acf",
    "extract_extrema",
    "AttractorKind",
    "AttractorClass",
    "ClassifierConfig",
    "classify_attractor",
    "BifurcationEntry",
    "BifurcationDiagram",
    "bifurcation_scan",
    "divergence_rate",
    "valid_time",
    "largest_lyapunov_dde",
    "CensusResult",
    "multistability_census",
    "attractor_projection",
]

log = logging.getLogger(__name__)

DELTA_ACF_LAGS = 1100


def _values(x) -> np.ndarray:
    if isinstance(x, ScalarSeries):
        return x.values
    if hasattr(x, "grid"):
        return np.asarray(x.grid, dtype=float)
    return np.asarray(x, dtype=float)


def nrmse(pred, target) -> float:
    """Root-mean-square error divided by the standard deviation of ``target``."""
    p, t = _values(pred), _values(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    sd = np.std(t)
    if sd == 0:
        raise ValueError("target has zero variance; NRMSE undefined")
    return float(np.sqrt(np.mean((p - t) ** 2)) / sd)


def acf(series, max_lag: int, normalization: str = "unbiased") -> np.ndarray:
    """Autocorrelation at lags ``0..max_lag`` with ``acf[0] == 1``.

    ``"unbiased"`` divides each lagged sum by its number of terms, so an exactly
    periodic signal reaches 1 at its period; ``"biased"`` divides by ``N``.
    """
    x = _values(series)
    n = x.size
    if n <= max_lag:
        raise ValueError(f"series length {n} must exceed max_lag {max_lag}")
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var <= 1e-300 or np.ptp(x) == 0:
        raise ValueError("constant series: autocorrelation undefined")
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(x, nfft)
    raw = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag + 1]
    if normalization == "unbiased":
        raw = raw / (n - np.arange(max_lag + 1))
    elif normalization == "biased":
        raw = raw / n
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    return raw / var


def delta_acf(a, b, max_lag: int = DELTA_ACF_LAGS) -> float:
    """Summed absolute ACF difference over lags ``0..max_lag``.

    A constant series has no ACF; against a non-constant one it scores the
    maximal mismatch ``max_lag + 1``, and two constant series score 0.
    """
    va, vb = _values(a), _values(b)
    const_a, const_b = np.ptp(va) == 0, np.ptp(vb) == 0
    if const_a or const_b:
        return 0.0 if const_a and const_b else float(max_lag + 1)
    return float(np.sum(np.abs(acf(va, max_lag) - acf(vb, max_lag))))


def extract_extrema(series, n_discard: int = 0) -> List[float]:
    """Local maxima of the post-transient series.

    Runs of equal values count as one point, so a plateau yields its value.
    A series without interior maxima (monotone approach) yields its last value.
    """
    x = _values(series)[n_discard:]
    if x.size < 3:
        raise ValueError("need at least 3 samples after the transient")
    keep = np.concatenate(([True], np.diff(x) != 0))
    c = x[keep]
    if c.size < 3:
        return [float(c[-1])]
    inner = (c[1:-1] > c[:-2]) & (c[1:-1] > c[2:])
    peaks = c[1:-1][inner]
    if peaks.size == 0:
        return [float(c[-1])]
    return [float(v) for v in peaks]


class AttractorKind(str, enum.Enum):
    FIXED_POINT = "FixedPoint"
    LIMIT_CYCLE = "LimitCycle"
    CHAOTIC = "Chaotic"
    DIVERGENT = "Divergent"


@dataclass(frozen=True)
class ClassifierConfig:
    fixed_tol: float = 1e-4
    lc_threshold: float = 0.99
    min_lag: int = 10
    max_lag: int = DELTA_ACF_LAGS
    recur_tol: int = 2


@dataclass(frozen=True)
class AttractorClass:
    kind: AttractorKind
    value_range: float
    period: Optional[int] = None
    peak_acf: Optional[float] = None


def classify_attractor(series, config: ClassifierConfig = ClassifierConfig()) -> AttractorClass:
    """Fixed point, limit cycle or chaos from range and ACF recurrence.

    A limit cycle needs an ACF peak above ``lc_threshold`` in
    ``[min_lag, max_lag]`` that recurs above the threshold at twice its lag
    (within ``recur_tol``) whenever the series is long enough to test it.
    """
    x = _values(series)
    if not np.all(np.isfinite(x)):
        return AttractorClass(AttractorKind.DIVERGENT, float("nan"))
    span = float(np.ptp(x))
    if span < config.fixed_tol * max(1.0, abs(float(np.mean(x)))):
        return AttractorClass(AttractorKind.FIXED_POINT, span)
    top = min(2 * config.max_lag + config.recur_tol, x.size // 2)
    r = acf(x, top)
    lo, hi = config.min_lag, min(config.max_lag, top)
    window = r[lo: hi + 1]
    period = int(lo + np.argmax(window))
    peak = float(window.max())
    kind = AttractorKind.CHAOTIC
    if peak > config.lc_threshold:
        # the first lag above threshold is the fundamental period
        period = int(lo + np.flatnonzero(window > config.lc_threshold)[0])
        # refine to the local maximum within the first above-threshold run
        j = period
        while j + 1 <= hi and r[j + 1] >= r[j]:
            j += 1
        period = j
        twice = 2 * period
        if twice + config.recur_tol > top:
            kind = AttractorKind.LIMIT_CYCLE
        else:
            near = r[twice - config.recur_tol: twice + config.recur_tol + 1]
            if near.max() > config.lc_threshold:
                kind = AttractorKind.LIMIT_CYCLE
        peak = float(r[period])
    return AttractorClass(kind, span, period, peak)


@dataclass(frozen=True)
class BifurcationEntry:
    extrema: Tuple[float, ...]
    attractor: AttractorClass
    diverged: bool = False
    note: str = ""


@dataclass
class BifurcationDiagram:
    entries: Dict[int, BifurcationEntry] = field(default_factory=dict)

    def kinds(self) -> Dict[int, AttractorKind]:
        return {d: e.attractor.kind for d, e in sorted(self.entries.items())}

    def rows(self):
        """``(D, extremum)`` pairs sorted by D."""
        for d in sorted(self.entries):
            for v in self.entries[d].extrema:
                yield d, v


def _system_series(params: DdeParams, D: int, n_steps: int, n_discard: int, seed: int,
                   history=None) -> np.ndarray:
    prm = replace(params, tau=float(D))
    return integrate_dde(prm, history, n_transient=n_discard, n_samples=n_steps, seed=seed).values


def _producer_series(producer, D: int, n_steps: int, n_discard: int, seed: int) -> np.ndarray:
    from .desn import DelayedReservoir, run_closed_loop, set_delay

    if isinstance(producer, DelayedReservoir):
        return run_closed_loop(set_delay(producer, D), n_steps, n_discard).values
    if isinstance(producer, (MgParams, IkedaParams)):
        return _system_series(producer, D, n_steps, n_discard, seed)
    raise TypeError(f"unsupported producer {type(producer).__name__}")


def bifurcation_scan(producer, D_values: Iterable[int], steps_per_D: int = 5000,
                     n_discard: Optional[int] = None, seed: int = 0,
                     config: ClassifierConfig = ClassifierConfig()) -> BifurcationDiagram:
    """Extrema and attractor class for each delay.

    ``producer`` is a trained :class:`DelayedReservoir` (rescaled with
    ``set_delay``) or system parameters (integrated with ``tau = D``).
    Divergent delays are recorded as flagged entries.
    """
    from .desn import DelayedReservoir, POST_RESCALE_DISCARD

    if n_discard is None:
        n_discard = POST_RESCALE_DISCARD if isinstance(producer, DelayedReservoir) else 5000
    diagram = BifurcationDiagram()
    for D in sorted(set(int(d) for d in D_values)):
        try:
            x = _producer_series(producer, D, steps_per_D, n_discard, seed)
        except DivergenceError as exc:
            log.warning("delay %d diverged at step %d", D, exc.step)
            diagram.entries[D] = BifurcationEntry(
                (), AttractorClass(AttractorKind.DIVERGENT, float("nan")), True,
                f"diverged at step {exc.step}")
            continue
        except ValueError as exc:
            # e.g. a loop delay the model cannot represent
            log.warning("delay %d skipped: %s", D, exc)
            diagram.entries[D] = BifurcationEntry(
                (), AttractorClass(AttractorKind.DIVERGENT, float("nan")), True, str(exc))
            continue
        cls = classify_attractor(x, config)
        # round-off wiggles around a fixed point are not extrema
        extrema = (float(x[-1]),) if cls.kind is AttractorKind.FIXED_POINT else tuple(extract_extrema(x))
        diagram.entries[D] = BifurcationEntry(extrema, cls)
    return diagram


def divergence_rate(reference, test, cutoff: float = 0.1, return_window: bool = False):
    """Exponential growth rate of ``|reference - test|`` per sample.

    The slope of ``log|gap|`` is fitted by least squares from the start up to
    the first sample where the gap reaches ``cutoff`` times the range of
    ``reference``.
    """
    r, t = _values(reference), _values(test)
    if r.shape != t.shape:
        raise ValueError("series must have equal length")
    gap = np.abs(r - t)
    limit = cutoff * np.ptp(r)
    hit = np.flatnonzero(gap >= limit)
    end = int(hit[0]) if hit.size else gap.size
    n = np.arange(end)
    ok = gap[:end] > 0
    if ok.sum() < 3:
        raise ValueError("trajectories do not separate measurably before the cutoff")
    slope = float(np.polyfit(n[ok], np.log(gap[:end][ok]), 1)[0])
    return (slope, end) if return_window else slope


def valid_time(reference, test, threshold: float = 0.3, scale: Optional[float] = None) -> int:
    """Samples until ``|reference - test| / scale`` first exceeds ``threshold``.

    ``scale`` defaults to the standard deviation of ``reference``.
    """
    r, t = _values(reference), _values(test)
    scale = float(np.std(r)) if scale is None else scale
    err = np.abs(r - t) / scale
    over = np.flatnonzero(err > threshold)
    return int(over[0]) if over.size else int(err.size)


def largest_lyapunov_dde(params: DdeParams, tau: Optional[float] = None, n_renorm: int = 400,
                         seed: int = 0, renorm_interval: float = 50.0, n_transient: int = 5000,
                         eps: float = 1e-8, h: float = 0.1) -> float:
    """Two-trajectory estimate of the largest Lyapunov exponent (per time unit).

    A reference and a perturbed copy of the delay-interval state are advanced
    together; every ``renorm_interval`` time units the separation, measured
    as the L2 norm over the stored delay interval, is rescaled to ``eps`` and
    its log-stretch accumulated.
    """
    if tau is not None:
        params = replace(params, tau=float(tau))
    kind = "mackey-glass" if isinstance(params, MgParams) else "ikeda"
    n_tau = int(round(params.tau / h))
    ref = DdeState(params, default_history(kind, seed=seed, n_points=n_tau + 1), h=h)
    ref.advance(int(round(n_transient / h)))
    rng = np.random.default_rng([seed, 1])
    direction = rng.standard_normal(n_tau + 1)
    seg = ref.segment()
    pert = ref.copy()
    pert.set_segment(seg + eps * direction / np.linalg.norm(direction))
    ref.set_segment(seg)
    steps = int(round(renorm_interval / h))
    total = 0.0
    for _ in range(n_renorm):
        ref.advance(steps)
        pert.advance(steps)
        a, b = ref.segment(), pert.segment()
        d = np.linalg.norm(b - a)
        total += math.log(d / eps)
        pert.set_segment(a + (b - a) * (eps / d))
        ref.set_segment(a)
    return total / (n_renorm * renorm_interval)


@dataclass(frozen=True)
class CensusResult:
    D: int
    n_limit_cycle: int
    n_chaotic: int
    n_fixed: int
    n_divergent: int

    @property
    def total(self) -> int:
        return self.n_limit_cycle + self.n_chaotic + self.n_fixed + self.n_divergent


def _count(kinds: Sequence[AttractorKind], D: int) -> CensusResult:
    return CensusResult(
        D,
        sum(k is AttractorKind.LIMIT_CYCLE for k in kinds),
        sum(k is AttractorKind.CHAOTIC for k in kinds),
        sum(k is AttractorKind.FIXED_POINT for k in kinds),
        sum(k is AttractorKind.DIVERGENT for k in kinds),
    )


def multistability_census(producer, D: int, n_init: int = 100, seed: int = 0,
                          n_steps: int = 4096, n_discard: Optional[int] = None,
                          config: ClassifierConfig = ClassifierConfig(),
                          perturbation: float = 0.1, batch: int = 25) -> CensusResult:
    """Attractor counts over ``n_init`` initial conditions at delay ``D``.

    System parameters start from :func:`default_history` draws with seeds
    ``seed, seed + 1, ...``; a trained model starts from perturbed copies of
    its delay line (see :func:`desn.random_histories`).
    """
    from .desn import (DelayedReservoir, POST_RESCALE_DISCARD, closed_loop_batch,
                       random_histories, set_delay)

    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    kinds: List[AttractorKind] = []
    if isinstance(producer, DelayedReservoir):
        n_discard = POST_RESCALE_DISCARD if n_discard is None else n_discard
        model = set_delay(producer, D)
        for start in range(0, n_init, batch):
            b = min(batch, n_init - start)
            hist = random_histories(model, b, seed=seed + start, scale=perturbation)
            out = closed_loop_batch(model, hist, n_steps, n_discard)
            kinds.extend(classify_attractor(out[:, j], config).kind for j in range(b))
    elif isinstance(producer, (MgParams, IkedaParams)):
        n_discard = 5000 if n_discard is None else n_discard
        for i in range(n_init):
            try:
                x = _system_series(producer, D, n_steps, n_discard, seed + i)
            except DivergenceError:
                kinds.append(AttractorKind.DIVERGENT)
                continue
            kinds.append(classify_attractor(x, config).kind)
    else:
        raise TypeError(f"unsupported producer {type(producer).__name__}")
    return _count(kinds, D)


def attractor_projection(series, lag: int) -> np.ndarray:
    """Pairs ``(y(n), y(n - lag))`` as an ``(N - lag) x 2`` array."""
    x = _values(series)
    return np.column_stack([x[lag:], x[:-lag]])
