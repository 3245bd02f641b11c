"""Shared types, linear-algebra helpers, the exact posterior and the master objective.

Conventions
-----------
``vec`` stacks columns, so a D x K matrix ``W`` maps to ``W.ravel(order="F")``
and a matrix-variate Gaussian ``MN(0, R, C)`` has ``cov(vec(W)) = kron(C, R)``.
Prior precisions are stored as precisions (``R_inv``, ``C_inv``) throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DimMismatchError, DimensionCapError, NonFiniteError, NotPDError

SYMMETRY_TOL = 1e-10


def _frozen_array(a, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise DimMismatchError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def vec(W: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(W).ravel(order="F")


def unvec(w: np.ndarray, D: int, K: int) -> np.ndarray:
    return np.asarray(w).reshape((D, K), order="F")


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def cholesky(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising :class:`NotPDError` on failure."""
    try:
        return linalg.cholesky(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPDError(f"{name} is not positive definite") from exc


def logdet_pd(A: np.ndarray, name: str = "matrix") -> float:
    L = cholesky(A, name)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def inv_pd(A: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix, symmetrized."""
    L = cholesky(symmetrize(A), name)
    inv = linalg.cho_solve((L, True), np.eye(A.shape[0]))
    return symmetrize(inv)


def is_pd(A: np.ndarray) -> bool:
    try:
        linalg.cholesky(A, lower=True)
    except (linalg.LinAlgError, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Dataset:
    """Feature matrix ``X`` (N x D) and responses ``Y`` (N x K).

    Use :meth:`centered_copy` to shift the columns of ``Y`` to zero mean; the
    removed means are stored in ``column_means`` and added back by prediction.
    """

    X: np.ndarray
    Y: np.ndarray
    centered: bool = False
    column_means: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _frozen_array(self.X, "X")
        Y = _frozen_array(self.Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise DimMismatchError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if min(X.shape) < 1 or Y.shape[1] < 1:
            raise DimMismatchError("N, D and K must all be at least 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.column_means is not None:
            mu = _frozen_array(self.column_means, "column_means", ndim=1)
            if mu.shape[0] != Y.shape[1]:
                raise DimMismatchError("column_means must have length K")
            object.__setattr__(self, "column_means", mu)
        if self.centered:
            if self.column_means is None:
                raise DimMismatchError("a centered dataset needs its column_means")
            if np.any(np.abs(Y.sum(axis=0)) > 1e-9 * Y.shape[0] * max(1.0, np.abs(Y).max())):
                raise DimMismatchError("Y columns are not centered")

    @classmethod
    def centered_from(cls, X, Y) -> "Dataset":
        Y = np.asarray(Y, dtype=float)
        mu = Y.mean(axis=0)
        return cls(X, Y - mu, centered=True, column_means=mu)

    def centered_copy(self) -> "Dataset":
        if self.centered:
            return self
        return Dataset.centered_from(self.X, self.Y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.Y.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        """``X^T X``."""
        g = self.X.T @ self.X
        g = symmetrize(g)
        g.setflags(write=False)
        return g

    @cached_property
    def XtY(self) -> np.ndarray:
        r = self.X.T @ self.Y
        r.setflags(write=False)
        return r


@dataclass(frozen=True)
class PriorPrecisions:
    """Row (feature, D x D) and column (task, K x K) prior precisions."""

    R_inv: np.ndarray
    C_inv: np.ndarray

    def __post_init__(self):
        for name in ("R_inv", "C_inv"):
            A = _frozen_array(getattr(self, name), name)
            if A.shape[0] != A.shape[1]:
                raise DimMismatchError(f"{name} must be square, got {A.shape}")
            if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(A).max()):
                raise NotPDError(f"{name} is not symmetric")
            cholesky(A, name)
            object.__setattr__(self, name, A)

    @classmethod
    def identity(cls, D: int, K: int) -> "PriorPrecisions":
        return cls(np.eye(D), np.eye(K))

    @property
    def D(self) -> int:
        return self.R_inv.shape[0]

    @property
    def K(self) -> int:
        return self.C_inv.shape[0]


@dataclass(frozen=True)
class Postdata:
    """Matrix-variate Gaussian ``MN(M, G, H)`` over the weights.

    With ``G`` and ``H`` both exactly zero the covariance is degenerate and the
    state represents the mean-only heuristic (the ``mvg`` variant).
    """

    M: np.ndarray
    G: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        M = _frozen_array(self.M, "M")
        G = _frozen_array(self.G, "G")
        H = _frozen_array(self.H, "H")
        D, K = M.shape
        if G.shape != (D, D) or H.shape != (K, K):
            raise DimMismatchError(f"G {G.shape} and H {H.shape} do not match M {M.shape}")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "H", H)

    @classmethod
    def mean_only(cls, M) -> "Postdata":
        M = np.asarray(M, dtype=float)
        D, K = M.shape
        return cls(M, np.zeros((D, D)), np.zeros((K, K)))

    @property
    def degenerate(self) -> bool:
        return not np.any(self.G) and not np.any(self.H)


@dataclass(frozen=True)
class Hyperparams:
    """Noise variance and penalty weights.

    ``sigma2=None`` means "initialize from the data" when passed to ``fit``;
    ``gamma=None`` picks the variant default.
    """

    sigma2: Optional[float] = None
    gamma: Optional[float] = None
    lambda_r: float = 0.0
    lambda_c: float = 0.0

    def __post_init__(self):
        if self.sigma2 is not None and not (self.sigma2 > 0 and np.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if self.gamma is not None and not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if not (self.lambda_r >= 0 and self.lambda_c >= 0):
            raise ValueError("lambda_r and lambda_c must be nonnegative")


def _check_shapes(data: Dataset, prior: PriorPrecisions):
    if prior.D != data.D or prior.K != data.K:
        raise DimMismatchError(
            f"prior is {prior.D}x{prior.K} but the data has D={data.D}, K={data.K}"
        )


def exact_posterior(data: Dataset, prior: PriorPrecisions, sigma2: float, cap: int = 4000):
    """Dense Gaussian posterior of ``vec(W)``.

    Returns ``(mu, Sigma)`` with::

        Sigma^-1 = kron(C_inv, R_inv) + kron(I_K, X^T X) / sigma2
        mu       = Sigma kron(I_K, X^T) vec(Y) / sigma2

    Only meant for small problems (``D*K <= cap``); it is the reference the
    iterative solvers are checked against.
    """
    _check_shapes(data, prior)
    D, K = data.D, data.K
    if D * K > cap:
        raise DimensionCapError(f"D*K = {D * K} exceeds the dense posterior cap {cap}")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    prec = np.kron(prior.C_inv, prior.R_inv) + np.kron(np.eye(K), data.gram) / sigma2
    prec = symmetrize(prec)
    L = cholesky(prec, "posterior precision")
    rhs = vec(data.XtY) / sigma2
    mu = linalg.cho_solve((L, True), rhs)
    Sigma = symmetrize(linalg.cho_solve((L, True), np.eye(D * K)))
    return mu, Sigma


def nuclear_norm(M: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(M, compute_uv=False)))


def master_objective(
    data: Dataset,
    post: Postdata,
    prior: PriorPrecisions,
    hp: Hyperparams,
    denominator: str = "ND",
) -> float:
    """Negative evidence bound minimized by every block update of ``fit``.

    ::

        J = c ln s2 + (|Y - XM|_F^2 + tr(X^T X G) tr(H)) / s2
            + tr(R_inv G) tr(C_inv H) + tr(C_inv M^T R_inv M)
            - K ln|G| - D ln|H| - K ln|R_inv| - D ln|C_inv|
            + gamma |M|_* + K lambda_r |R_inv|_1 + D lambda_c |C_inv|_1

    with ``c = N*D`` (or ``N*K`` when ``denominator="NK"``). For a degenerate
    ``post`` (``G = H = 0``) the covariance terms are dropped.
    """
    _check_shapes(data, prior)
    if post.M.shape != (data.D, data.K):
        raise DimMismatchError(f"M has shape {post.M.shape}, expected {(data.D, data.K)}")
    if hp.sigma2 is None:
        raise ValueError("master_objective needs a concrete sigma2")
    N, D, K = data.N, data.D, data.K
    s2 = hp.sigma2
    c = N * D if denominator == "ND" else N * K
    M, G, H = post.M, post.G, post.H
    R_inv, C_inv = prior.R_inv, prior.C_inv

    resid = data.Y - data.X @ M
    J = c * np.log(s2) + float(np.sum(resid * resid)) / s2
    J += float(np.sum((R_inv @ M) * (M @ C_inv)))
    if not post.degenerate:
        J += float(np.sum(data.gram * G)) * np.trace(H) / s2
        J += float(np.sum(R_inv * G)) * float(np.sum(C_inv * H))
        J -= K * logdet_pd(G, "G") + D * logdet_pd(H, "H")
    J -= K * logdet_pd(R_inv, "R_inv") + D * logdet_pd(C_inv, "C_inv")
    gamma = hp.gamma or 0.0
    if gamma:
        J += gamma * nuclear_norm(M)
    if hp.lambda_r:
        J += K * hp.lambda_r * float(np.abs(R_inv).sum())
    if hp.lambda_c:
        J += D * hp.lambda_c * float(np.abs(C_inv).sum())
    if not np.isfinite(J):
        raise NonFiniteError("master objective is not finite")
    return float(J)


def gaussian_holdout_loglik(Y_val: np.ndarray, C_est: np.ndarray) -> float:
    """Mean per-row log density of ``Y_val`` under ``N(0, C_est)``."""
    Y_val = np.atleast_2d(np.asarray(Y_val, dtype=float))
    K = Y_val.shape[1]
    if C_est.shape != (K, K):
        raise DimMismatchError(f"C_est has shape {C_est.shape}, expected {(K, K)}")
    L = cholesky(C_est, "C_est")
    z = linalg.solve_triangular(L, Y_val.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    quad = np.sum(z * z, axis=0)
    return float(np.mean(-0.5 * (K * np.log(2 * np.pi) + logdet + quad)))
