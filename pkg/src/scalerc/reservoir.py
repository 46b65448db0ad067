"""Echo-state building blocks: random weights, spectral radius, updates, ridge readouts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "WeightSet",
    "DesnParams",
    "MG_TABLE1",
    "IKEDA_TABLE2",
    "generate_weights",
    "scale_to_radius",
    "spectral_radius",
    "desn_step",
    "ridge_fit",
    "RidgeAccumulator",
    "seed_streams",
]

DENSE_EIG_LIMIT = 64


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Fixed random weights of one reservoir.

    ``W`` is a ``K x K`` CSR matrix, ``W_in`` is ``K x M`` and ``W_b`` has length ``K``.
    """

    W: sp.csr_matrix
    W_in: np.ndarray
    W_b: np.ndarray

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def M(self) -> int:
        return self.W_in.shape[1]

    def equals(self, other: "WeightSet") -> bool:
        """Bitwise equality of all arrays."""
        a, b = self.W.tocsr(), other.W.tocsr()
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
            and np.array_equal(self.W_in, other.W_in)
            and np.array_equal(self.W_b, other.W_b)
        )


@dataclass(frozen=True)
class DesnParams:
    """Hyperparameters of a delayed echo state network."""

    K: int = 1000
    D: int = 100
    alpha: float = 0.75
    beta: float = 0.176
    gamma: float = 1.24
    rho: float = 0.84
    sparsity: float = 0.015
    bias_scale: float = 1.0
    noise_std: float = 1e-3
    ridge_lambda: float = 1e-6
    n_init: int = 5000
    n_train: int = 25000
    seed: int = 0

    def __post_init__(self):
        if self.D < 2:
            raise ValueError(f"loop delay D must be >= 2, got {self.D}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        for name in ("alpha", "beta", "gamma", "rho", "noise_std", "ridge_lambda"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def with_(self, **changes) -> "DesnParams":
        return replace(self, **changes)


MG_TABLE1 = DesnParams(K=1000, D=100, alpha=0.75, beta=0.176, gamma=1.24, rho=0.84,
                       n_init=5000, n_train=25000)
IKEDA_TABLE2 = DesnParams(K=1000, D=100, alpha=0.0, beta=0.1, gamma=1.71429, rho=0.6975,
                          n_init=1000, n_train=20000)


def seed_streams(seed: int, n: int) -> list:
    """``n`` independent generators derived from one integer seed."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def spectral_radius(matrix) -> float:
    """Largest eigenvalue magnitude.

    Small matrices use a dense eigensolve. Larger ones use implicitly
    restarted Arnoldi, which copes with the complex-conjugate dominant pairs
    that stall a plain power iteration.
    """
    shape = matrix.shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {shape}")
    n = shape[0]
    if n <= DENSE_EIG_LIMIT:
        dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        return float(np.max(np.abs(np.linalg.eigvals(dense)))) if n else 0.0
    if sp.issparse(matrix) and matrix.nnz == 0:
        return 0.0
    v0 = np.ones(n) / np.sqrt(n)
    try:
        vals = spla.eigs(matrix, k=min(6, n - 2), which="LM", tol=1e-12,
                         maxiter=20 * n, v0=v0, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise RuntimeError(f"spectral radius did not converge for K={n}") from exc
    return float(np.max(np.abs(vals)))


def scale_to_radius(W, rho: float) -> sp.csr_matrix:
    """Rescale ``W`` so its spectral radius equals ``rho``."""
    W = sp.csr_matrix(W, dtype=float)
    if rho == 0:
        return W * 0.0
    current = spectral_radius(W)
    if current == 0.0:
        raise ValueError("degenerate weight draw: spectral radius is zero")
    return sp.csr_matrix(W * (rho / current))


def generate_weights(K: int, M: int = 1, sparsity: float = 0.015, rho: float = 0.84,
                     bias_scale: float = 1.0, seed: int = 0) -> WeightSet:
    """Draw ``W``, ``W_in`` and ``W_b`` from U[-1, 1].

    ``W`` keeps each entry independently with probability ``sparsity`` and is
    then scaled to spectral radius ``rho``.
    """
    if K < 1 or M < 1:
        raise ValueError("K and M must be positive")
    if not 0 < sparsity <= 1:
        raise ValueError(f"sparsity must be in (0, 1], got {sparsity}")
    if rho < 0:
        raise ValueError("rho must be non-negative")
    rng_w, rng_in, rng_b = seed_streams(seed, 3)
    mask = rng_w.random((K, K)) < sparsity
    values = rng_w.uniform(-1.0, 1.0, size=int(mask.sum()))
    rows, cols = np.nonzero(mask)
    W = sp.csr_matrix((values, (rows, cols)), shape=(K, K))
    W = scale_to_radius(W, rho)
    W_in = rng_in.uniform(-1.0, 1.0, size=(K, M))
    W_b = bias_scale * rng_b.uniform(-1.0, 1.0, size=K)
    return WeightSet(W, W_in, W_b)


def desn_step(history: np.ndarray, s: float, weights: WeightSet, params: DesnParams) -> np.ndarray:
    """One delayed-ESN update ``alpha x(n) + beta tanh(W x_del + gamma W_in s + W_b)``.

    ``history[0]`` is ``x(n)``; the last entry is the delayed state ``x_del``.
    """
    x_now = history[0]
    x_del = history[-1]
    drive = weights.W @ x_del + params.gamma * weights.W_in[:, 0] * s + weights.W_b
    return params.alpha * x_now + params.beta * np.tanh(drive)


def _solve_normal(A: np.ndarray, B: np.ndarray, lam: float) -> np.ndarray:
    A = A + lam * np.eye(A.shape[0])
    try:
        sol = scipy.linalg.solve(A, B, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise np.linalg.LinAlgError(
            "ridge system is singular; use ridge_lambda > 0"
        ) from exc
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("ridge system is singular; use ridge_lambda > 0")
    return sol.T


def ridge_fit(states: np.ndarray, targets: np.ndarray, lam: float = 1e-6) -> np.ndarray:
    """Readout ``W_out`` (``R x K``) minimizing ``|S W^T - Y|^2 + lam |W|^2``."""
    S = np.asarray(states, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return _solve_normal(S.T @ S, S.T @ Y, lam)


@dataclass
class RidgeAccumulator:
    """Streaming normal equations for regressions too large to hold in memory."""

    K: int
    R: int
    StS: np.ndarray = field(init=False)
    StY: np.ndarray = field(init=False)
    count: int = field(init=False, default=0)

    def __post_init__(self):
        self.StS = np.zeros((self.K, self.K))
        self.StY = np.zeros((self.K, self.R))

    def add(self, states: np.ndarray, targets: np.ndarray) -> None:
        self.StS += states.T @ states
        self.StY += states.T @ targets.reshape(len(states), self.R)
        self.count += len(states)

    def solve(self, lam: float) -> np.ndarray:
        return _solve_normal(self.StS, self.StY, lam)
