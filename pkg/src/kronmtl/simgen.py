"""Synthetic multitask regression data with known precision structure.

Draw order from the single generator is fixed: the sparse factor ``U`` (its
uniform mask, then its signs), the weight factors ``A`` then ``B``, the three
feature matrices (train, val, test), then the three noise matrices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from .core import Dataset, cholesky
from .errors import ConfigError


@dataclass(frozen=True)
class SimSpec:
    N: int = 50
    D: int = 200
    K: int = 10
    rank: int = 2
    snr: float = 10.0
    offdiag_density: float = 0.20
    laplacian_ridge: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if min(self.N, self.D, self.K) < 1:
            raise ConfigError("N, D and K must be positive")
        if self.K < 2 or self.D < 2:
            raise ConfigError("D and K must be at least 2")
        if not 1 <= self.rank <= min(self.D, self.K):
            raise ConfigError(f"rank must satisfy 1 <= rank <= min(D, K) = {min(self.D, self.K)}")
        if not 0 < self.offdiag_density <= 1:
            raise ConfigError("offdiag_density must lie in (0, 1]")
        if not self.snr > 0:
            raise ConfigError("snr must be positive")
        if not self.laplacian_ridge >= 0:
            raise ConfigError("laplacian_ridge must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")


class SparsePrecision(NamedTuple):
    precision: np.ndarray
    density: float
    reached: bool


class SimTruth(NamedTuple):
    W_true: np.ndarray
    C_inv_true: np.ndarray
    R_inv_true: np.ndarray
    sigma2_true: float
    realized_density: float
    density_reached: bool


def offdiag_density(A: np.ndarray, threshold: float = 0.0) -> float:
    """Fraction of strictly-upper-triangular entries with ``|a| > threshold``."""
    iu = np.triu_indices(A.shape[0], 1)
    return float(np.mean(np.abs(A[iu]) > threshold))


def gen_sparse_precision(K: int, offdiag_density_target: float, seed=None,
                         tol: float = 0.05, max_steps: int = 50) -> SparsePrecision:
    """``U U^T + delta I`` with a random sparse sign matrix ``U``.

    The entry probability of ``U`` is found by bisection (reusing the same
    uniform draws at every step) so that the off-diagonal density of
    ``U U^T`` lands within ``tol`` of the target.
    """
    if K < 2:
        raise ConfigError("K must be at least 2")
    rng = np.random.default_rng(seed)
    u = rng.random((K, K))
    signs = np.where(rng.random((K, K)) < 0.5, -1.0, 1.0)

    def build(p):
        U = np.where(u < p, signs, 0.0)
        UU = U @ U.T
        return UU, offdiag_density(UU)

    lo, hi = 0.0, 1.0
    best = None
    for _ in range(max_steps):
        p = 0.5 * (lo + hi)
        UU, dens = build(p)
        err = abs(dens - offdiag_density_target)
        if best is None or err < best[0]:
            best = (err, UU, dens)
        if err <= tol:
            break
        if dens < offdiag_density_target:
            lo = p
        else:
            hi = p
    err, UU, dens = best
    lam_min = float(np.linalg.eigvalsh(UU)[0])
    delta = max(0.0, 1e-3 - lam_min) + 1e-3
    return SparsePrecision(UU + delta * np.eye(K), dens, err <= tol)


def chain_laplacian(D: int, ridge: float = 0.01) -> np.ndarray:
    """Normalized Laplacian of the path graph on ``D`` nodes, plus ``ridge * I``."""
    if D < 2:
        raise ConfigError("D must be at least 2")
    A = np.zeros((D, D))
    i = np.arange(D - 1)
    A[i, i + 1] = 1.0
    A[i + 1, i] = 1.0
    d = 1.0 / np.sqrt(A.sum(axis=1))
    L = np.eye(D) - d[:, None] * A * d[None, :]
    return L + ridge * np.eye(D)


def _sample_columns(precision: np.ndarray, n: int, rng) -> np.ndarray:
    # columns ~ N(0, precision^-1): solve L^T x = z with precision = L L^T
    L = cholesky(precision, "precision")
    z = rng.standard_normal((precision.shape[0], n))
    return linalg.solve_triangular(L.T, z, lower=False)


def gen_lowrank_W(R_inv: np.ndarray, C_inv: np.ndarray, rank: int, seed=None) -> np.ndarray:
    """``W = A B^T`` with ``A`` columns ~ N(0, R) and ``B`` columns ~ N(0, C)."""
    D, K = R_inv.shape[0], C_inv.shape[0]
    if not 1 <= rank <= min(D, K):
        raise ConfigError(f"rank must satisfy 1 <= rank <= {min(D, K)}")
    rng = np.random.default_rng(seed)
    A = _sample_columns(R_inv, rank, rng)
    B = _sample_columns(C_inv, rank, rng)
    return A @ B.T


def gen_dataset(spec: SimSpec, R_inv: Optional[np.ndarray] = None):
    """Train/validation/test splits sharing one ground truth.

    The feature precision is the (fixed) chain Laplacian unless ``R_inv`` is
    given; the task precision is the sparse recovery target. The noise
    variance is ``var(X_train W) / snr``.

    Returns
    -------
    (train, val, test, truth)
    """
    rng = np.random.default_rng(spec.seed)
    sp = gen_sparse_precision(spec.K, spec.offdiag_density, rng)
    if R_inv is None:
        R_inv = chain_laplacian(spec.D, spec.laplacian_ridge)
    W = gen_lowrank_W(R_inv, sp.precision, spec.rank, rng)
    Xs = [rng.standard_normal((spec.N, spec.D)) for _ in range(3)]
    signals = [X @ W for X in Xs]
    var_signal = float(np.var(signals[0]))
    sigma2 = var_signal / spec.snr if var_signal > 0 else 1.0
    noise = [np.sqrt(sigma2) * rng.standard_normal((spec.N, spec.K)) for _ in range(3)]
    splits = [Dataset(X, S + E) for X, S, E in zip(Xs, signals, noise)]
    truth = SimTruth(W, sp.precision, R_inv, sigma2, sp.density, sp.reached)
    return splits[0], splits[1], splits[2], truth
