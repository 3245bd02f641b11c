"""Nuclear-norm penalized postdata mean.

Minimizes::

    f(M) = |Y - X M|_F^2 / s2 + tr(M^T R_inv M C_inv) + gamma |M|_*

by accelerated proximal gradient with singular-value soft-thresholding as the
proximal step and function-value restarts, which keeps the accepted iterates
monotone in ``f``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .core import Dataset, PriorPrecisions, _check_shapes
from .errors import ConfigError, ConvergenceWarning, NoProgressError

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class MeanSolveConfig:
    tol: float = 1e-8
    max_iter: int = 5000
    step_rule: str = "fixed_lipschitz"

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("mean solver tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("mean solver max_iter must be at least 1")
        if self.step_rule not in ("fixed_lipschitz", "backtracking"):
            raise ConfigError(f"unknown step_rule {self.step_rule!r}")


class MeanSolveResult(NamedTuple):
    M: np.ndarray
    iters: int
    converged: bool


def _svt(A: np.ndarray, tau: float):
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (U * s) @ Vt, float(s.sum())


def svt_prox(A: np.ndarray, tau: float) -> np.ndarray:
    """Proximal operator of ``tau * |.|_*``: soft-threshold the singular values."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    return _svt(np.asarray(A, dtype=float), tau)[0]


def numerical_rank(M: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Count of singular values above ``rtol * sigma_max``."""
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def spectral_norm_psd(A: np.ndarray, tol: float = 1e-10, max_iter: int = 1000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = A.shape[0]
    if n == 1:
        return float(abs(A[0, 0]))
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def smooth_gradient(M, data: Dataset, prior: PriorPrecisions, sigma2: float) -> np.ndarray:
    """Gradient of ``|Y - XM|_F^2 / s2 + tr(M^T R_inv M C_inv)``."""
    M = np.asarray(M, dtype=float)
    X = data.X
    return (2.0 / sigma2) * (X.T @ (X @ M - data.Y)) + 2.0 * (prior.R_inv @ M @ prior.C_inv)


def mean_objective(M, data: Dataset, prior: Optional[PriorPrecisions], sigma2: float,
                   gamma: float) -> float:
    r = data.Y - data.X @ M
    f = float(np.sum(r * r)) / sigma2
    if prior is not None:
        f += float(np.sum((prior.R_inv @ M) * (M @ prior.C_inv)))
    if gamma:
        f += gamma * float(np.sum(np.linalg.svd(M, compute_uv=False)))
    return f


def lipschitz_constant(data: Dataset, prior: Optional[PriorPrecisions], sigma2: float) -> float:
    X = data.X
    small = X @ X.T if data.N < data.D else data.gram
    L = 2.0 * spectral_norm_psd(small) / sigma2
    if prior is not None:
        L += 2.0 * spectral_norm_psd(prior.R_inv) * spectral_norm_psd(prior.C_inv)
    return L


def solve_mean(
    data: Dataset,
    prior: Optional[PriorPrecisions],
    sigma2: float,
    gamma: float = 0.0,
    cfg: Optional[MeanSolveConfig] = None,
    M0: Optional[np.ndarray] = None,
) -> MeanSolveResult:
    """Minimize the penalized mean objective.

    Parameters
    ----------
    data : Dataset
    prior : PriorPrecisions or None
        ``None`` drops the ``tr(M^T R_inv M C_inv)`` term (plain nuclear-norm
        regression).
    sigma2 : float
        Noise variance weighting the data term.
    gamma : float
        Weight of the nuclear norm.
    cfg : MeanSolveConfig, optional
    M0 : ndarray, optional
        Warm start; defaults to zero.

    Returns
    -------
    MeanSolveResult
        ``(M, iters, converged)``. Iteration stops once both the relative
        change of ``f`` and the relative change of the iterate fall below
        ``cfg.tol``.
    """
    cfg = cfg or MeanSolveConfig()
    if prior is not None:
        _check_shapes(data, prior)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    X, Y = data.X, data.Y
    D, K = data.D, data.K

    if prior is not None:
        R_inv, C_inv = prior.R_inv, prior.C_inv

        def Q(A):
            return R_inv @ A @ C_inv
    else:
        def Q(A):
            return np.zeros_like(A)

    def smooth(XA, A, QA):
        r = XA - Y
        return float(np.sum(r * r)) / sigma2 + float(np.sum(A * QA))

    def prox(A, tau):
        if not gamma:
            return A, 0.0
        return _svt(A, tau)

    x = np.zeros((D, K)) if M0 is None else np.array(M0, dtype=float)
    Xx, Qx = X @ x, Q(x)
    Fx = smooth(Xx, x, Qx) + (gamma * float(np.linalg.svd(x, compute_uv=False).sum()) if gamma else 0.0)

    if cfg.step_rule == "fixed_lipschitz":
        L = lipschitz_constant(data, prior, sigma2)
    else:
        L = 1.0
    if L <= 0:
        L = 1.0

    y, Xy, Qy = x, Xx, Qx
    t = 1.0
    restarted = True
    tiny = np.finfo(float).tiny
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = (2.0 / sigma2) * (X.T @ (Xy - Y)) + 2.0 * Qy
        while True:
            z, nuc = prox(y - grad / L, gamma / L)
            Xz, Qz = X @ z, Q(z)
            fz = smooth(Xz, z, Qz)
            if cfg.step_rule == "fixed_lipschitz":
                break
            diff = z - y
            fy = smooth(Xy, y, Qy)
            if fz <= fy + float(np.sum(grad * diff)) + 0.5 * L * float(np.sum(diff * diff)) * (1 + 1e-12):
                break
            L *= 2.0
            if not np.isfinite(L) or L > 1e300:
                raise NoProgressError("backtracking step underflowed")
        Fz = fz + (gamma * nuc if gamma else 0.0)

        if Fz <= Fx:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_new
            dF = abs(Fx - Fz)
            dx = float(np.linalg.norm(z - x))
            nz = float(np.linalg.norm(z))
            y = z + beta * (z - x)
            Xy = Xz + beta * (Xz - Xx)
            Qy = Qz + beta * (Qz - Qx)
            x, Xx, Qx, Fx = z, Xz, Qz, Fz
            t = t_new
            restarted = False
            if dF <= cfg.tol * max(abs(Fx), tiny) and dx <= cfg.tol * max(nz, tiny):
                converged = True
                break
        elif restarted:
            if Fz - Fx <= 1e-12 * max(abs(Fx), tiny):
                # no representable progress left from x
                converged = True
                break
            # a plain gradient step from x increased f: L was underestimated
            L *= 2.0
            if not np.isfinite(L) or L > 1e300:
                raise NoProgressError("step size underflowed")
        else:
            y, Xy, Qy = x, Xx, Qx
            t = 1.0
            restarted = True
    if not converged:
        warnings.warn(f"solve_mean stopped at max_iter={cfg.max_iter}", ConvergenceWarning,
                      stacklevel=2)
    return MeanSolveResult(x, it, converged)
