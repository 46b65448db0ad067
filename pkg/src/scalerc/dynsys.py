"""Ground-truth integrators for the delay systems and the Kuramoto-Sivashinsky PDE.

The delay differential equations are integrated with fixed-step RK4. The
delayed argument is read from a ring buffer holding the solution and its
derivative on the integration grid, so the midpoint stages use cubic Hermite
interpolation and the full stages land exactly on stored grid points.

The KS equation ``y_t = -y y_x - y_xx - y_xxxx`` is solved pseudospectrally on a
periodic domain with the ETDRK4 scheme of Cox & Matthews, with the
phi-functions evaluated by contour averaging (Kassam & Trefethen).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numba
import numpy as np

__all__ = [
    "DivergenceError",
    "ScalarSeries",
    "SpatioTemporalField",
    "MgParams",
    "IkedaParams",
    "KsParams",
    "DdeState",
    "integrate_mackey_glass",
    "integrate_ikeda",
    "integrate_dde",
    "integrate_ks",
    "default_history",
    "ks_initial_field",
    "settling_index",
    "ks_transient_episodes",
]

MACKEY_GLASS = 0
IKEDA = 1


class DivergenceError(ArithmeticError):
    """Raised when a trajectory leaves the finite range."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class ScalarSeries:
    """Uniformly sampled scalar time series."""

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("ScalarSeries needs a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)):
            raise ValueError("ScalarSeries values must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, item):
        if isinstance(item, slice):
            return ScalarSeries(self.values[item], self.dt)
        return self.values[item]


@dataclass(frozen=True)
class SpatioTemporalField:
    """Field sampled on ``Q`` equidistant points of ``[0, L)`` and ``N`` times.

    ``grid`` has shape ``(Q, N)``: space along rows, time along columns.
    """

    grid: np.ndarray
    L: float
    dt: float = 0.25

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 2:
            raise ValueError("field grid must be 2-D (space x time)")
        if not np.all(np.isfinite(grid)):
            raise ValueError("field entries must be finite")
        q_expected = 10.0 * self.L / math.pi
        if abs(q_expected - grid.shape[0]) > 1e-6 * q_expected:
            raise ValueError(
                f"Q={grid.shape[0]} inconsistent with L={self.L} (need 10 points per pi)"
            )
        object.__setattr__(self, "grid", grid)

    @property
    def Q(self) -> int:
        return self.grid.shape[0]

    @property
    def n_times(self) -> int:
        return self.grid.shape[1]

    def column(self, n: int) -> np.ndarray:
        return self.grid[:, n]


@dataclass(frozen=True)
class MgParams:
    """Mackey-Glass ``ds/dt = -s/T0 + a s(t-tau) / (1 + s(t-tau)^p)``."""

    T0: float = 10.0
    tau: float = 100.0
    a: float = 0.2
    p: float = 10.0

    kind = MACKEY_GLASS

    def rhs_args(self):
        return self.a, self.p


@dataclass(frozen=True)
class IkedaParams:
    """Ikeda-type ``ds/dt = -s/T0 + beta sin^2(s(t-tau))``."""

    T0: float = 10.0
    tau: float = 100.0
    beta: float = 0.4

    kind = IKEDA

    def rhs_args(self):
        return self.beta, 0.0


DdeParams = Union[MgParams, IkedaParams]


@dataclass(frozen=True)
class KsParams:
    L: float = 10 * math.pi
    dt_sample: float = 0.25
    dt_internal: float = 0.25

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        ratio = self.dt_sample / self.dt_internal
        if self.dt_internal > self.dt_sample or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_sample must be an integer multiple of dt_internal")
        if self.Q < 4:
            raise ValueError("grid needs at least 4 points")

    @property
    def Q(self) -> int:
        q = 10.0 * self.L / math.pi
        if abs(q - round(q)) > 1e-6:
            raise ValueError(f"L={self.L} is not an integer multiple of pi/10")
        return int(round(q))

    @classmethod
    def from_size(cls, n_pi: int, **kwargs) -> "KsParams":
        """Parameters for a domain of length ``n_pi * pi``."""
        return cls(L=n_pi * math.pi, **kwargs)


# ---------------------------------------------------------------------------
# Delay differential equations


@numba.njit(cache=True, inline="always")
def _rhs(kind, s, s_del, inv_T0, c1, c2):
    if kind == MACKEY_GLASS:
        return -s * inv_T0 + c1 * s_del / (1.0 + s_del**c2)
    else:
        sn = math.sin(s_del)
        return -s * inv_T0 + c1 * sn * sn


@numba.njit(cache=True)
def _dde_advance(vals, ders, pos, kind, inv_T0, c1, c2, h, n_steps, every, out, out_pos):
    """Advance the ring buffer ``n_steps`` RK4 steps.

    ``vals[pos]`` holds the current value, ``vals[(pos+1) % n]`` the value one
    delay ago. Every ``every`` steps the new value is written to ``out``.
    Returns ``(pos, n_written, bad_step)``; ``bad_step`` is -1 when finite.
    """
    n = vals.shape[0]
    written = 0
    for i in range(n_steps):
        s = vals[pos]
        j0 = (pos + 1) % n  # delayed grid point at t - tau
        j1 = (pos + 2) % n  # delayed grid point at t + h - tau
        y0 = vals[j0]
        y1 = vals[j1]
        mid = 0.5 * (y0 + y1) + 0.125 * h * (ders[j0] - ders[j1])
        k1 = _rhs(kind, s, y0, inv_T0, c1, c2)
        k2 = _rhs(kind, s + 0.5 * h * k1, mid, inv_T0, c1, c2)
        k3 = _rhs(kind, s + 0.5 * h * k2, mid, inv_T0, c1, c2)
        k4 = _rhs(kind, s + h * k3, y1, inv_T0, c1, c2)
        s_new = s + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not math.isfinite(s_new):
            return pos, written, i
        # the slot after pos holds the oldest point, which is no longer needed
        pos = j0
        vals[pos] = s_new
        ders[pos] = _rhs(kind, s_new, y1, inv_T0, c1, c2)
        if (i + 1) % every == 0:
            out[out_pos + written] = s_new
            written += 1
    return pos, written, -1


class DdeState:
    """Mutable integrator state: solution and derivative over one delay interval.

    The buffer stores ``tau/h + 1`` grid points covering ``[t - tau, t]``.
    """

    def __init__(self, params: DdeParams, history, h: float = 0.1):
        n_tau = _steps_per(params.tau, h, "tau")
        self.params = params
        self.h = h
        self.n_tau = n_tau
        values = _history_grid(history, n_tau)
        self.vals = values.copy()
        # history derivative drives the Hermite midpoints inside the first delay interval
        if n_tau >= 2:
            self.ders = np.gradient(values, h)
        else:
            self.ders = np.zeros(n_tau + 1)
        self.pos = n_tau  # newest point last
        self.t = 0.0

    def copy(self) -> "DdeState":
        other = object.__new__(DdeState)
        other.params, other.h, other.n_tau = self.params, self.h, self.n_tau
        other.vals, other.ders = self.vals.copy(), self.ders.copy()
        other.pos, other.t = self.pos, self.t
        return other

    def segment(self) -> np.ndarray:
        """Solution on ``[t - tau, t]`` in time order."""
        return np.roll(self.vals, -(self.pos + 1))

    def set_segment(self, values: np.ndarray) -> None:
        self.vals = np.asarray(values, dtype=float).copy()
        self.pos = self.vals.size - 1
        prm = self.params
        c1, c2 = prm.rhs_args()
        n = self.vals.size
        ders = np.empty(n)
        for i in range(n):
            delayed = self.vals[i - self.n_tau] if i >= self.n_tau else self.vals[0]
            ders[i] = _rhs(prm.kind, self.vals[i], delayed, 1.0 / prm.T0, c1, c2)
        self.ders = ders

    @property
    def value(self) -> float:
        return float(self.vals[self.pos])

    def advance(self, n_steps: int, every: int = 0) -> np.ndarray:
        """Integrate ``n_steps`` internal steps, recording every ``every``-th value."""
        every = every if every > 0 else n_steps + 1
        out = np.empty(n_steps // every)
        prm = self.params
        c1, c2 = prm.rhs_args()
        pos, written, bad = _dde_advance(
            self.vals, self.ders, self.pos, prm.kind, 1.0 / prm.T0,
            float(c1), float(c2), self.h, n_steps, every, out, 0,
        )
        if bad >= 0:
            step = int(round(self.t / self.h)) + bad
            raise DivergenceError(f"non-finite delay-system state at step {step}", step)
        self.pos = pos
        self.t += n_steps * self.h
        return out[:written]


def _steps_per(interval: float, h: float, name: str) -> int:
    n = interval / h
    if n < 1 - 1e-9 or abs(n - round(n)) > 1e-6:
        raise ValueError(f"{name}={interval} must be a positive integer multiple of h={h}")
    return int(round(n))


def _history_grid(history, n_tau: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(history, dtype=float))
    if not np.all(np.isfinite(arr)):
        raise ValueError("history must be finite")
    if arr.size == 1:
        return np.full(n_tau + 1, arr[0])
    if arr.size == n_tau + 1:
        return arr.copy()
    # resample an arbitrary-resolution history onto the integration grid
    src = np.linspace(0.0, 1.0, arr.size)
    dst = np.linspace(0.0, 1.0, n_tau + 1)
    return np.interp(dst, src, arr)


def integrate_dde(
    params: DdeParams,
    history=None,
    n_transient: int = 5000,
    n_samples: int = 1000,
    seed: int = 0,
    h: float = 0.1,
    dt: float = 1.0,
) -> ScalarSeries:
    """Integrate a scalar delay system and return samples every ``dt``.

    ``history`` is a constant, a sequence on ``[-tau, 0]`` (any resolution,
    resampled onto the grid), or ``None`` for :func:`default_history` drawn
    from ``seed``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if history is None:
        kind = "mackey-glass" if params.kind == MACKEY_GLASS else "ikeda"
        history = default_history(kind, seed=seed, n_points=_steps_per(params.tau, h, "tau") + 1)
    state = DdeState(params, history, h=h)
    every = _steps_per(dt, h, "dt")
    if n_transient:
        state.advance(n_transient * every)
    return ScalarSeries(state.advance(n_samples * every, every), dt)


def integrate_mackey_glass(params: MgParams = MgParams(), history=None, n_transient: int = 5000,
                           n_samples: int = 1000, seed: int = 0, h: float = 0.1) -> ScalarSeries:
    return integrate_dde(params, history, n_transient, n_samples, seed, h)


def integrate_ikeda(params: IkedaParams = IkedaParams(), history=None, n_transient: int = 5000,
                    n_samples: int = 1000, seed: int = 0, h: float = 0.1) -> ScalarSeries:
    return integrate_dde(params, history, n_transient, n_samples, seed, h)


_HISTORY_DEFAULTS = {
    "mackey-glass": (0.9, 0.1),
    "ikeda": (0.5, 0.1),
}


def default_history(
    kind: str = "constant-plus-noise",
    amplitude: Optional[float] = None,
    seed: int = 0,
    n_points: int = 1001,
    base: Optional[float] = None,
) -> np.ndarray:
    """Deterministic initial history of ``n_points`` grid values.

    ``kind`` is ``"constant-plus-noise"`` (``base`` plus uniform noise of
    half-width ``amplitude``), ``"uniform-random"`` (uniform on
    ``[0, amplitude]``), or a system name (``"mackey-glass"``, ``"ikeda"``)
    selecting that system's default base and amplitude.
    """
    if kind in _HISTORY_DEFAULTS:
        b, a = _HISTORY_DEFAULTS[kind]
        base = b if base is None else base
        amplitude = a if amplitude is None else amplitude
        kind = "constant-plus-noise"
    amplitude = 0.1 if amplitude is None else amplitude
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    rng = np.random.default_rng(seed)
    if kind == "constant-plus-noise":
        base = 0.9 if base is None else base
        return base + amplitude * rng.uniform(-1.0, 1.0, n_points)
    if kind == "uniform-random":
        return amplitude * rng.uniform(0.0, 1.0, n_points)
    raise ValueError(f"unknown history kind {kind!r}")


# ---------------------------------------------------------------------------
# Kuramoto-Sivashinsky


@dataclass
class _Etdrk4:
    E: np.ndarray
    E2: np.ndarray
    Qc: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    g: np.ndarray
    mask: np.ndarray = field(repr=False)


def _etdrk4_coefficients(Q: int, L: float, h: float, n_contour: int = 32) -> _Etdrk4:
    k = 2.0 * math.pi * np.fft.rfftfreq(Q, d=L / Q)
    lin = k**2 - k**4
    E = np.exp(h * lin)
    E2 = np.exp(h * lin / 2.0)
    roots = np.exp(1j * math.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    LR = h * lin[:, None] + roots[None, :]
    Qc = h * np.real(np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1))
    f1 = h * np.real(np.mean((-4.0 - LR + np.exp(LR) * (4.0 - 3.0 * LR + LR**2)) / LR**3, axis=1))
    f2 = h * np.real(np.mean((2.0 + LR + np.exp(LR) * (-2.0 + LR)) / LR**3, axis=1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * LR - LR**2 + np.exp(LR) * (4.0 - LR)) / LR**3, axis=1))
    # 2/3-rule dealiasing on the rfft index
    idx = np.arange(k.size)
    mask = idx < (Q // 2) * 2.0 / 3.0
    g = -0.5j * k * mask
    return _Etdrk4(E, E2, Qc, f1, f2, f3, g, mask)


def ks_initial_field(Q: int, seed: int = 0, n_modes: int = 4, amplitude: float = 0.5) -> np.ndarray:
    """Low-pass random field: the lowest ``n_modes`` Fourier modes, max |y| = amplitude."""
    rng = np.random.default_rng(seed)
    x = 2.0 * math.pi * np.arange(Q) / Q
    y = np.zeros(Q)
    for m in range(1, n_modes + 1):
        a, b = rng.standard_normal(2)
        y += a * np.cos(m * x) + b * np.sin(m * x)
    return amplitude * y / np.max(np.abs(y))


def integrate_ks(
    params: KsParams = KsParams(),
    init=None,
    n_transient: int = 1000,
    n_samples: int = 1000,
    seed: int = 0,
) -> SpatioTemporalField:
    """Integrate the periodic KS equation; returns a ``Q x n_samples`` field.

    ``init`` is a length-``Q`` initial column; ``None`` draws
    :func:`ks_initial_field` from ``seed``. ``n_transient`` is counted in samples.
    """
    Q, L = params.Q, params.L
    if init is None:
        y0 = ks_initial_field(Q, seed)
    else:
        y0 = np.asarray(init, dtype=float)
        if y0.shape != (Q,):
            raise ValueError(f"init must have {Q} entries, got shape {y0.shape}")
    co = _etdrk4_coefficients(Q, L, params.dt_internal)
    sub = int(round(params.dt_sample / params.dt_internal))
    v = np.fft.rfft(y0)
    out = np.empty((Q, n_samples))
    rfft, irfft = np.fft.rfft, np.fft.irfft
    E, E2, Qc, f1, f2, f3, g = co.E, co.E2, co.Qc, co.f1, co.f2, co.f3, co.g

    def nonlin(vh):
        return g * rfft(irfft(vh, Q) ** 2)

    total = (n_transient + n_samples) * sub
    for i in range(total):
        Nv = nonlin(v)
        a = E2 * v + Qc * Nv
        Na = nonlin(a)
        b = E2 * v + Qc * Na
        Nb = nonlin(b)
        c = E2 * a + Qc * (2.0 * Nb - Nv)
        Nc = nonlin(c)
        v = E * v + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
        if (i + 1) % sub == 0:
            n = (i + 1) // sub - 1 - n_transient
            if not np.all(np.isfinite(v)):
                raise DivergenceError(f"non-finite KS modes at sample {n + n_transient}", n + n_transient)
            if n >= 0:
                out[:, n] = irfft(v, Q)
    return SpatioTemporalField(out, L, params.dt_sample)


def settling_index(grid: np.ndarray, tol: float = 0.01, window: int = 200) -> Optional[int]:
    """First column after which the field stops moving.

    The field counts as settled once the largest per-sample change stays
    below ``tol`` for ``window`` consecutive samples; ``None`` if it never does.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.shape[1] < window + 1:
        return None
    still = (np.abs(np.diff(grid, axis=1)).max(axis=0) < tol).astype(np.int64)
    run = np.convolve(still, np.ones(window, dtype=np.int64), "valid")
    hits = np.flatnonzero(run == window)
    return int(hits[0]) if hits.size else None


def ks_transient_episodes(
    params: KsParams = KsParams(),
    n_samples: int = 20000,
    seed: int = 0,
    skip: int = 100,
    min_length: int = 300,
    max_length: int = 6000,
) -> List[SpatioTemporalField]:
    """Chaotic stretches of KS runs from independent random initial fields.

    At some domain sizes (``L = 10 pi`` among them) generic initial fields
    wander chaotically for a few hundred time units and then lock onto a
    stable cellular state. This collects the pre-lock stretches of runs
    seeded ``seed, seed + 1, ...``, dropping the first ``skip`` samples of
    each, until ``n_samples`` columns are gathered. Runs that never lock
    contribute ``max_length - skip`` columns. Stretches shorter than
    ``min_length`` are discarded.
    """
    episodes: List[SpatioTemporalField] = []
    total, s = 0, seed
    while total < n_samples:
        run = integrate_ks(params, n_transient=0, n_samples=max_length, seed=s)
        s += 1
        end = settling_index(run.grid)
        end = run.grid.shape[1] if end is None else end
        if end - skip < min_length:
            continue
        piece = run.grid[:, skip:end]
        episodes.append(SpatioTemporalField(piece, params.L, params.dt_sample))
        total += piece.shape[1]
        if s - seed > 100 * (1 + n_samples // min_length):
            raise RuntimeError("could not collect enough chaotic KS samples")
    return episodes
