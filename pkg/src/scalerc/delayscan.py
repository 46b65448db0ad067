"""Delay estimation by scanning the dESN loop delay against one-step accuracy.

For every candidate delay a small random search over the reservoir gains
picks the best validation NRMSE; the estimate is the delay with the lowest
score. Candidates are drawn once from the seed and reused for every delay,
so scores at neighbouring delays differ only through the delay itself and
the result does not depend on the order in which delays are evaluated.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .analysis import nrmse
from .desn import MIN_DELAY, run_open_loop, train
from .dynsys import ScalarSeries
from .reservoir import DesnParams

__all__ = [
    "DEFAULT_BOUNDS",
    "SCAN_BASE",
    "ScanEntry",
    "DelayScanResult",
    "split_series",
    "validation_nrmse",
    "sample_candidates",
    "random_search_hyperparams",
    "scan_delay",
]

log = logging.getLogger(__name__)

# (low, high) per tuned gain; beta, gamma and rho are sampled log-uniformly
DEFAULT_BOUNDS: Dict[str, Tuple[float, float]] = {
    "alpha": (0.0, 0.95),
    "beta": (0.02, 1.0),
    "gamma": (0.1, 5.0),
    "rho": (0.1, 1.2),
}
LOG_UNIFORM = ("beta", "gamma", "rho")
TRAIN_FRACTION = 0.8

# desk-scale reservoir for scans; gains are overwritten by the search
SCAN_BASE = DesnParams(K=200, n_init=500, noise_std=1e-3, ridge_lambda=1e-6)


@dataclass(frozen=True)
class ScanEntry:
    D: int
    nrmse: float
    params: Optional[DesnParams]
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and np.isfinite(self.nrmse)


@dataclass(frozen=True)
class DelayScanResult:
    entries: Mapping[int, ScanEntry]

    @property
    def estimate(self) -> int:
        """Delay with the smallest NRMSE; ties go to the smaller delay."""
        good = [e for e in self.entries.values() if e.ok]
        if not good:
            raise RuntimeError("no delay in the scan produced a valid fit")
        return min(good, key=lambda e: (e.nrmse, e.D)).D

    def rows(self):
        """``(D, nrmse)`` sorted by ``D``; failed delays carry NaN."""
        return [(D, self.entries[D].nrmse if self.entries[D].ok else math.nan)
                for D in sorted(self.entries)]


def _values(series) -> np.ndarray:
    return np.asarray(series.values if isinstance(series, ScalarSeries) else series, dtype=float)


def split_series(series, fraction: float = TRAIN_FRACTION) -> Tuple[np.ndarray, np.ndarray]:
    """Chronological train/validation split; the validation part starts with the
    last training sample so that every validation target has a predecessor."""
    s = _values(series)
    cut = int(fraction * s.size)
    if cut < 2 or s.size - cut < 2:
        raise ValueError(f"series of length {s.size} is too short to split")
    return s[:cut], s[cut - 1:]


def validation_nrmse(series, params: DesnParams) -> float:
    """Fit on the training part, score one-step predictions on the rest.

    The reservoir continues from its final training state, so no extra
    washout is spent on the validation part.
    """
    s_train, s_val = split_series(series)
    n_train = s_train.size - params.n_init - 1
    if n_train < 1:
        raise ValueError("n_init leaves no training samples")
    p = replace(params, n_train=n_train)
    model = train(s_train, p)
    # training consumed s_train[:-1]; s_val starts at s_train[-1]
    preds = run_open_loop(model, s_val).values
    return nrmse(preds, s_val[1:])


def _sample_value(rng: np.random.Generator, name: str, lo: float, hi: float) -> float:
    if lo > hi or not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError(f"bad bounds for {name}: ({lo}, {hi})")
    if name in LOG_UNIFORM:
        if lo <= 0:
            raise ValueError(f"log-uniform bounds for {name} must be positive")
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    return float(rng.uniform(lo, hi))


def sample_candidates(base: DesnParams, budget: int, bounds: Mapping = DEFAULT_BOUNDS,
                      seed: int = 0) -> list:
    """``budget`` parameter sets with gains drawn inside ``bounds``.

    Each candidate also gets its own weight seed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    unknown = set(bounds) - set(DEFAULT_BOUNDS)
    if unknown:
        raise ValueError(f"cannot tune {sorted(unknown)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5CA9]))
    out = []
    for _ in range(budget):
        gains = {name: _sample_value(rng, name, *bounds[name]) for name in sorted(bounds)}
        out.append(replace(base, seed=int(rng.integers(2**31)), **gains))
    return out


def _score(series, params: DesnParams) -> Tuple[float, Optional[str]]:
    try:
        return validation_nrmse(series, params), None
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        return math.nan, f"{type(exc).__name__}: {exc}"


def _best(series, candidates: Sequence[DesnParams]) -> Tuple[float, Optional[DesnParams], list]:
    best_err, best_p, errors = math.inf, None, []
    for p in candidates:
        err, msg = _score(series, p)
        if msg is not None:
            errors.append(msg)
        elif err < best_err:
            best_err, best_p = err, p
    return best_err, best_p, errors


def random_search_hyperparams(series, D: int, budget: int = 50, bounds: Mapping = DEFAULT_BOUNDS,
                              seed: int = 0, base: DesnParams = SCAN_BASE) -> DesnParams:
    """Best of ``budget`` random gain settings at loop delay ``D``."""
    candidates = [replace(p, D=D) for p in sample_candidates(base, budget, bounds, seed)]
    best_err, best_p, errors = _best(series, candidates)
    if best_p is None:
        raise RuntimeError(f"all {budget} candidates failed at D={D}: {errors[0]}")
    return best_p


def _scan_one(args) -> ScanEntry:
    series, D, candidates = args
    if D < MIN_DELAY:
        return ScanEntry(D, math.nan, None, f"loop delay below {MIN_DELAY}")
    best_err, best_p, errors = _best(series, [replace(p, D=D) for p in candidates])
    if best_p is None:
        return ScanEntry(D, math.nan, None, errors[0] if errors else "no candidates")
    return ScanEntry(D, best_err, best_p)


def scan_delay(series, D_range: Iterable[int], budget_per_D: int = 50, seed: int = 0,
               bounds: Mapping = DEFAULT_BOUNDS, base: DesnParams = SCAN_BASE,
               preset: Optional[DesnParams] = None, workers: int = 1) -> DelayScanResult:
    """Validation NRMSE for every loop delay in ``D_range``.

    With ``preset`` the tuning is skipped and the preset gains are scored at
    every delay. ``workers > 1`` spreads delays over processes; the result is
    identical to a serial scan.
    """
    Ds = sorted(set(int(D) for D in D_range))
    if not Ds:
        raise ValueError("D_range is empty")
    s = _values(series)
    candidates = [preset] if preset is not None else sample_candidates(base, budget_per_D, bounds, seed)
    jobs = [(s, D, candidates) for D in Ds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            found = list(pool.map(_scan_one, jobs))
    else:
        found = [_scan_one(j) for j in jobs]
    for e in found:
        if not e.ok:
            log.warning("D=%d flagged: %s", e.D, e.error)
    return DelayScanResult({e.D: e for e in found})
