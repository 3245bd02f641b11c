"""Sparse prior precisions: graphical lasso and the alternating R/C updates.

The graphical lasso solves::

    minimize_Theta  tr(S Theta) - ln|Theta| + lam * sum_ij |Theta_ij|

with ADMM (eigenvalue step on Theta, soft-threshold step on its sparse copy).
Once the ADMM iterate has settled on a support, a Newton solve restricted to
that support and sign pattern polishes the nonzeros; the result is only
accepted when it passes the full KKT check.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import linalg

from .core import PriorPrecisions, inv_pd, is_pd, logdet_pd, symmetrize
from .errors import ConfigError, ConvergenceWarning, NotPDError, SingularError

POLISH_MAX_PARAMS = 3000
LAMBDA0_JITTER = 1e-10


@dataclass(frozen=True)
class GlassoConfig:
    tol: float = 1e-6
    max_iter: int = 2000
    diag_penalized: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("glasso tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("glasso max_iter must be at least 1")


class GlassoResult(NamedTuple):
    precision: np.ndarray
    residual: float
    iters: int
    converged: bool


def _penalty_weights(P: int, diag_penalized: bool) -> np.ndarray:
    w = np.ones((P, P))
    if not diag_penalized:
        np.fill_diagonal(w, 0.0)
    return w


def glasso_objective(S, Theta, lam: float, diag_penalized: bool = True) -> float:
    w = _penalty_weights(S.shape[0], diag_penalized)
    return float(np.sum(S * Theta)) - logdet_pd(Theta, "Theta") + lam * float(np.sum(w * np.abs(Theta)))


def kkt_residual(S, Theta, lam: float, diag_penalized: bool = True) -> float:
    """Sup-norm violation of the graphical-lasso optimality conditions.

    Nonzero entries need ``S - Theta^-1 + lam * sign(Theta) = 0``; zero
    entries need ``|S - Theta^-1| <= lam``.
    """
    S = np.asarray(S, dtype=float)
    W = inv_pd(Theta, "Theta")
    grad = S - W
    pen = lam * _penalty_weights(S.shape[0], diag_penalized)
    nz = Theta != 0
    r = np.where(nz, np.abs(grad + pen * np.sign(Theta)), np.maximum(np.abs(grad) - pen, 0.0))
    return float(r.max())


def _soft(A, t):
    return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)


def _polish(S, Theta0, lam, weights, tol, max_newton=50):
    """Newton solve on the support and signs of ``Theta0``; None if the pattern is inconsistent."""
    P = S.shape[0]
    iu, ju = np.triu_indices(P)
    keep = (Theta0[iu, ju] != 0) | (iu == ju)
    I, J = iu[keep], ju[keep]
    m = I.size
    if m > POLISH_MAX_PARAMS:
        return None
    sgn = np.sign(Theta0[I, J])
    sgn[I == J] = 1.0
    c = np.where(I == J, 0.5, 1.0)
    lin = lam * weights[I, J] * sgn

    def to_mat(theta):
        T = np.zeros((P, P))
        T[I, J] = theta
        T[J, I] = theta
        return T

    def value(T):
        try:
            ld = logdet_pd(T)
        except NotPDError:
            return np.inf
        return float(np.sum(S * T)) - ld + float(np.sum(2 * c * lin * T[I, J]))

    theta = Theta0[I, J].copy()
    T = to_mat(theta)
    f = value(T)
    if not np.isfinite(f):
        return None
    for _ in range(max_newton):
        W = inv_pd(T)
        g = 2 * c * (S[I, J] - W[I, J] + lin)
        if np.max(np.abs(g)) <= 1e-3 * tol:
            break
        Hs = 2 * np.outer(c, c) * (W[np.ix_(I, I)] * W[np.ix_(J, J)] + W[np.ix_(I, J)] * W[np.ix_(J, I)])
        try:
            step = -linalg.solve(Hs, g, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            return None
        alpha = 1.0
        slope = float(g @ step)
        while alpha > 1e-12:
            cand = theta + alpha * step
            Tc = to_mat(cand)
            fc = value(Tc)
            if fc <= f + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break
        theta, T, f = cand, Tc, fc
    off = I != J
    if np.any(np.sign(theta[off]) != sgn[off]):
        return None
    return T


def glasso_solve(S, lam: float, cfg: Optional[GlassoConfig] = None) -> GlassoResult:
    """Graphical lasso with a KKT certificate; see :func:`glasso`."""
    cfg = cfg or GlassoConfig()
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"S must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("S contains non-finite entries")
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-10 * max(1.0, np.abs(S).max()):
        raise ValueError("S must be symmetric")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    S = symmetrize(S)
    P = S.shape[0]
    if lam == 0:
        try:
            Theta = inv_pd(S, "S")
        except NotPDError as exc:
            raise SingularError("S is singular; the unpenalized problem has no solution") from exc
        return GlassoResult(Theta, kkt_residual(S, Theta, 0.0), 0, True)

    weights = _penalty_weights(P, cfg.diag_penalized)
    scale = float(np.mean(np.diag(S)))
    if not scale > 0:
        scale = 1.0
    Ss = S / scale
    lam_s = lam / scale
    tol_s = cfg.tol / scale

    def residual(T):
        return kkt_residual(Ss, T, lam_s, cfg.diag_penalized)

    rho = 1.0
    Z = np.diag(1.0 / (np.diag(Ss) + lam_s * np.diag(weights)))
    U = np.zeros((P, P))
    best = (np.inf, Z)
    it = 0
    for it in range(1, cfg.max_iter + 1):
        es, Q = np.linalg.eigh(rho * (Z - U) - Ss)
        xi = (es + np.sqrt(es * es + 4.0 * rho)) / (2.0 * rho)
        Theta = symmetrize((Q * xi) @ Q.T)
        Z_old = Z
        Z = _soft(Theta + U, lam_s * weights / rho)
        Z = symmetrize(Z)
        U = U + Theta - Z
        r = np.linalg.norm(Theta - Z)
        s = rho * np.linalg.norm(Z - Z_old)
        if r > 10 * s:
            rho *= 2.0
            U /= 2.0
        elif s > 10 * r:
            rho /= 2.0
            U *= 2.0

        if it % 10 == 0 or it == cfg.max_iter:
            for cand in (Z, _polish(Ss, Z, lam_s, weights, tol_s)):
                if cand is None or not is_pd(cand):
                    continue
                res = residual(cand)
                if res < best[0]:
                    best = (res, cand)
            if best[0] <= tol_s:
                break
    res_s, T = best
    if not np.isfinite(res_s):
        T = Theta
        res_s = residual(T)
    converged = res_s <= tol_s
    if not converged:
        warnings.warn(
            f"glasso did not reach the KKT tolerance (residual {res_s * scale:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return GlassoResult(symmetrize(T) / scale, res_s * scale, it, converged)


def glasso(S, lam: float, cfg: Optional[GlassoConfig] = None) -> np.ndarray:
    """Sparse precision estimate for the covariance ``S`` at penalty ``lam``.

    The diagonal is penalized unless ``cfg.diag_penalized`` is False. With
    ``lam == 0`` the answer is ``S^-1`` (``SingularError`` if ``S`` is
    singular).
    """
    return glasso_solve(S, lam, cfg).precision


def surrogate_row_cov(M, G, H, C_inv) -> np.ndarray:
    """``S_R = (tr(C_inv H) G + M C_inv M^T) / K``."""
    M, G, H, C_inv = (np.asarray(a, dtype=float) for a in (M, G, H, C_inv))
    K = C_inv.shape[0]
    return symmetrize(float(np.sum(C_inv * H)) * G + M @ C_inv @ M.T) / K


def surrogate_col_cov(M, G, H, R_inv) -> np.ndarray:
    """``S_C = (tr(R_inv G) H + M^T R_inv M) / D``."""
    M, G, H, R_inv = (np.asarray(a, dtype=float) for a in (M, G, H, R_inv))
    D = R_inv.shape[0]
    return symmetrize(float(np.sum(R_inv * G)) * H + M.T @ R_inv @ M) / D


def precision_block(M, G, H, R_inv, C_inv, lambda_r: float, lambda_c: float) -> float:
    """Terms of the master objective that depend on the precisions."""
    D, K = M.shape
    val = float(np.sum(R_inv * G)) * float(np.sum(C_inv * H))
    val += float(np.sum((R_inv @ M) * (M @ C_inv)))
    val -= K * logdet_pd(R_inv, "R_inv") + D * logdet_pd(C_inv, "C_inv")
    val += K * lambda_r * float(np.abs(R_inv).sum()) + D * lambda_c * float(np.abs(C_inv).sum())
    return val


def _block_step(S, lam, cfg: GlassoConfig) -> Optional[np.ndarray]:
    """Glasso step for one block; None when the unpenalized problem has no minimizer."""
    P = S.shape[0]
    if lam == 0:
        S = S + LAMBDA0_JITTER * np.trace(S) / P * np.eye(P)
        try:
            return glasso(S, 0.0, cfg)
        except SingularError:
            return None
    scale = max(1.0, float(np.mean(np.diag(S))))
    return glasso(S, lam, replace(cfg, tol=cfg.tol * scale))


class PrecisionUpdate(NamedTuple):
    R_inv: np.ndarray
    C_inv: np.ndarray
    sweeps: int
    converged: bool


def update_precisions(
    M,
    G,
    H,
    prior: PriorPrecisions,
    lambda_r: float,
    lambda_c: float,
    fixed_R_inv: Optional[np.ndarray] = None,
    cfg: Optional[GlassoConfig] = None,
    tol: float = 1e-6,
    max_sweeps: int = 50,
    fixed_C_inv: Optional[np.ndarray] = None,
) -> PrecisionUpdate:
    """Alternate graphical-lasso updates of ``R_inv`` and ``C_inv``.

    Starts from ``prior``. A block is replaced only when its new value lowers
    the precision terms of the objective, so the sweep is monotone even when
    a glasso call stops short of its tolerance. A block whose surrogate is
    singular with no penalty (no minimizer exists) keeps its current value. ``fixed_R_inv`` (or
    ``fixed_C_inv``) pins that block for the whole call.
    """
    if lambda_r < 0 or lambda_c < 0:
        raise ValueError("penalties must be nonnegative")
    cfg = cfg or GlassoConfig()
    M = np.asarray(M, dtype=float)
    R = prior.R_inv if fixed_R_inv is None else np.asarray(fixed_R_inv, dtype=float)
    C = prior.C_inv if fixed_C_inv is None else np.asarray(fixed_C_inv, dtype=float)
    if fixed_R_inv is not None and fixed_C_inv is not None:
        return PrecisionUpdate(R, C, 0, True)

    def block(R_, C_):
        return precision_block(M, G, H, R_, C_, lambda_r, lambda_c)

    cur = block(R, C)
    converged = False
    sweep = 0
    for sweep in range(1, max_sweeps + 1):
        prev = cur
        if fixed_R_inv is None:
            R_new = _block_step(surrogate_row_cov(M, G, H, C), lambda_r, cfg)
            val = np.inf if R_new is None else block(R_new, C)
            if val <= cur:
                R, cur = R_new, val
        if fixed_C_inv is None:
            C_new = _block_step(surrogate_col_cov(M, G, H, R), lambda_c, cfg)
            val = np.inf if C_new is None else block(R, C_new)
            if val <= cur:
                C, cur = C_new, val
        if fixed_R_inv is not None or fixed_C_inv is not None:
            converged = True
            break
        if abs(prev - cur) <= tol * max(abs(prev), 1.0):
            converged = True
            break
    return PrecisionUpdate(R, C, sweep, converged)
