"""Kronecker-factored postdata covariance ``S = kron(H, G)``."""
from __future__ import annotations

import warnings
from typing import NamedTuple, Optional

import numpy as np

from .core import Dataset, PriorPrecisions, _check_shapes, inv_pd, logdet_pd, symmetrize
from .errors import ConvergenceWarning


class CovarianceFit(NamedTuple):
    G: np.ndarray
    H: np.ndarray
    iters: int
    converged: bool


def update_G(H, data: Dataset, prior: PriorPrecisions, sigma2: float) -> np.ndarray:
    """Row factor minimizing the covariance block for fixed ``H``.

    ``G^-1 = (tr(H) X^T X / s2 + tr(C_inv H) R_inv) / K``
    """
    _check_shapes(data, prior)
    K = data.K
    G_inv = (np.trace(H) / sigma2) * data.gram + float(np.sum(prior.C_inv * H)) * prior.R_inv
    return inv_pd(symmetrize(G_inv) / K, "G^-1")


def update_H(G, data: Dataset, prior: PriorPrecisions, sigma2: float) -> np.ndarray:
    """Column factor minimizing the covariance block for fixed ``G``.

    ``H^-1 = (tr(X^T X G) I_K / s2 + tr(R_inv G) C_inv) / D``
    """
    _check_shapes(data, prior)
    D, K = data.D, data.K
    H_inv = (float(np.sum(data.gram * G)) / sigma2) * np.eye(K) + float(np.sum(prior.R_inv * G)) * prior.C_inv
    return inv_pd(symmetrize(H_inv) / D, "H^-1")


def covariance_block(G, H, data: Dataset, prior: PriorPrecisions, sigma2: float) -> float:
    """Terms of the master objective that depend on ``(G, H)``."""
    D, K = data.D, data.K
    return (
        float(np.sum(data.gram * G)) * np.trace(H) / sigma2
        + float(np.sum(prior.R_inv * G)) * float(np.sum(prior.C_inv * H))
        - K * logdet_pd(G, "G")
        - D * logdet_pd(H, "H")
    )


def _pin_trace(H: np.ndarray, K: int) -> np.ndarray:
    # push the rounding remainder of the rescale into the last diagonal entry
    for _ in range(4):
        r = K - np.trace(H)
        if r == 0:
            break
        H[-1, -1] += r
    return H


def fit_covariance(
    data: Dataset,
    prior: PriorPrecisions,
    sigma2: float,
    tol: float = 1e-8,
    max_iter: int = 500,
    H0: Optional[np.ndarray] = None,
) -> CovarianceFit:
    """Alternate ``update_G`` / ``update_H`` to a joint fixed point.

    After each sweep the pair is rescaled to ``tr(H) = K`` (the objective is
    invariant under ``G -> aG, H -> H/a``). Stops when the block value and the
    factors both change by at most ``tol`` relatively. Hitting ``max_iter``
    returns the last pair with ``converged=False``.
    """
    K = data.K
    H = np.eye(K) if H0 is None else np.array(H0, dtype=float)
    G = None
    prev = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        G_new = update_G(H, data, prior, sigma2)
        H_new = update_H(G_new, data, prior, sigma2)
        a = np.trace(H_new) / K
        G_new = G_new * a
        H_new = _pin_trace(H_new / a, K)
        val = covariance_block(G_new, H_new, data, prior, sigma2)
        if G is not None:
            dG = np.linalg.norm(G_new - G) / max(np.linalg.norm(G_new), 1e-300)
            dH = np.linalg.norm(H_new - H) / max(np.linalg.norm(H_new), 1e-300)
            dv = abs(val - prev) / max(abs(prev), 1.0)
            if dv <= tol and max(dG, dH) <= tol:
                G, H = G_new, H_new
                converged = True
                break
        G, H, prev = G_new, H_new, val
    if not converged:
        warnings.warn(f"fit_covariance stopped at max_iter={max_iter}", ConvergenceWarning,
                      stacklevel=2)
    return CovarianceFit(G, H, it, converged)
