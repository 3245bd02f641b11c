"""Alternating constrained inference and parameter estimation.

One outer iteration runs, in order: the mean solve, the Kronecker covariance
loop, the precision sweeps and the noise-variance update. Each block is a
coordinate minimizer of :func:`kronmtl.core.master_objective`, so the
recorded objective trace is non-increasing.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from .core import Dataset, Hyperparams, Postdata, PriorPrecisions, master_objective
from .errors import ConfigError, ConvergenceWarning, DimMismatchError, NumericalError
from .kron import fit_covariance, update_G
from .nuclear import MeanSolveConfig, solve_mean
from .precision import GlassoConfig, update_precisions

VARIANTS = ("mvg", "mvg-corr", "mvg-rank")
DEFAULT_GAMMA = {"mvg": 0.0, "mvg-corr": 0.0, "mvg-rank": 1.0}
SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class FitConfig:
    variant: str = "mvg-rank"
    fixed_row_precision: Optional[np.ndarray] = None
    fixed_col_precision: Optional[np.ndarray] = None
    learn_sigma2: bool = True
    outer_tol: float = 1e-6
    outer_max_iter: int = 100
    mean: MeanSolveConfig = field(default_factory=MeanSolveConfig)
    cov_tol: float = 1e-8
    cov_max_iter: int = 500
    glasso: GlassoConfig = field(default_factory=GlassoConfig)
    precision_tol: float = 1e-6
    precision_max_sweeps: int = 50
    exact_posterior_cap: int = 4000
    sigma2_denominator: str = "ND"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.sigma2_denominator not in ("ND", "NK"):
            raise ConfigError("sigma2_denominator must be 'ND' or 'NK'")
        for name in ("outer_tol", "cov_tol", "precision_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("outer_max_iter", "cov_max_iter", "precision_max_sweeps", "exact_posterior_cap"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")


@dataclass
class FitReport:
    objective_trace: List[float] = field(default_factory=list)
    block_iters: Dict[str, List[int]] = field(default_factory=dict)
    converged: bool = False
    elapsed_seconds: float = 0.0
    flags: List[str] = field(default_factory=list)

    def comparable(self):
        """Everything except wall-clock time, for determinism checks."""
        return (tuple(self.objective_trace),
                {k: tuple(v) for k, v in self.block_iters.items()},
                self.converged, tuple(self.flags))


class FitResult(NamedTuple):
    post: Postdata
    hp: Hyperparams
    prior: PriorPrecisions
    report: FitReport


def update_sigma2(data: Dataset, post: Postdata, denominator: str = "ND") -> float:
    """Closed-form noise variance.

    ``s2 = (|Y - XM|_F^2 + tr(X^T X G) tr(H)) / (N*D)``; the trace term is
    zero for a degenerate ``post``. Values at or below zero are clamped to
    ``SIGMA2_FLOOR``.
    """
    r = data.Y - data.X @ post.M
    num = float(np.sum(r * r))
    if not post.degenerate:
        num += float(np.sum(data.gram * post.G)) * np.trace(post.H)
    den = data.N * (data.D if denominator == "ND" else data.K)
    return max(num / den, SIGMA2_FLOOR)


def predict(M, X_new, column_means=None) -> np.ndarray:
    """``X_new @ M`` plus the training column means when given."""
    M = np.asarray(M, dtype=float)
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != M.shape[0]:
        raise DimMismatchError(f"X_new has {X_new.shape[1]} columns, the model expects {M.shape[0]}")
    out = X_new @ M
    if column_means is not None:
        out = out + np.asarray(column_means, dtype=float)
    return out


def _resolve_gamma(variant: str, gamma: Optional[float]) -> float:
    if gamma is None:
        return DEFAULT_GAMMA[variant]
    if variant != "mvg-rank" and gamma != 0:
        raise ConfigError(f"variant {variant!r} has no nuclear-norm term; gamma must be 0")
    return float(gamma)


def fit(data: Dataset, hp0: Hyperparams, cfg: Optional[FitConfig] = None) -> FitResult:
    """Run the alternating algorithm to convergence of the master objective.

    Non-convergence never raises: the last iterate is returned with
    ``report.converged = False``. A numerical failure after the first
    completed sweep (typically sigma2 collapsing under the ``ND``
    denominator when ``N < D``) also returns the last completed iterate,
    with a ``stopped early`` flag, as does sigma2 reaching ``SIGMA2_FLOOR``.
    """
    cfg = cfg or FitConfig()
    t0 = time.perf_counter()
    D, K = data.D, data.K
    degenerate = cfg.variant == "mvg"
    gamma = _resolve_gamma(cfg.variant, hp0.gamma)

    R_fixed = cfg.fixed_row_precision
    C_fixed = cfg.fixed_col_precision
    if R_fixed is not None and np.shape(R_fixed) != (D, D):
        raise DimMismatchError(f"fixed row precision must be {D}x{D}")
    if C_fixed is not None and np.shape(C_fixed) != (K, K):
        raise DimMismatchError(f"fixed column precision must be {K}x{K}")
    prior = PriorPrecisions(
        np.eye(D) if R_fixed is None else R_fixed,
        np.eye(K) if C_fixed is None else C_fixed,
    )
    # keep the caller's arrays so a fixed block stays bit-identical
    R_fixed = prior.R_inv if R_fixed is not None else None
    C_fixed = prior.C_inv if C_fixed is not None else None

    if hp0.sigma2 is not None:
        sigma2 = float(hp0.sigma2)
    else:
        v = float(np.var(data.Y))
        sigma2 = v if v > 0 else 1.0
    hp = Hyperparams(sigma2, gamma, hp0.lambda_r, hp0.lambda_c)

    M = np.zeros((D, K))
    if degenerate:
        G, H = np.zeros((D, D)), np.zeros((K, K))
    else:
        H = np.eye(K)
        G = update_G(H, data, prior, sigma2)

    report = FitReport(block_iters={"mean": [], "covariance": [], "precision": []})
    J_prev = master_objective(data, Postdata(M, G, H), prior, hp, cfg.sigma2_denominator)
    for _ in range(cfg.outer_max_iter):
        try:
            step = _outer_step(data, cfg, prior, hp, M, G, H, R_fixed, C_fixed, degenerate, report)
        except NumericalError as exc:
            # e.g. sigma2 driven toward zero, where J has no minimizer; keep
            # the last completed iterate and say why
            if not report.objective_trace:
                raise
            report.flags.append(f"stopped early: {exc}")
            break
        M, G, H, prior, hp, J = step
        report.objective_trace.append(J)
        if cfg.learn_sigma2 and hp.sigma2 == SIGMA2_FLOOR:
            # J decreases without bound along this path; nothing left to refine
            report.flags.append("stopped early: sigma2 reached the floor")
            break
        if abs(J_prev - J) <= cfg.outer_tol * max(abs(J_prev), 1.0):
            report.converged = True
            break
        J_prev = J

    report.elapsed_seconds = time.perf_counter() - t0
    return FitResult(Postdata(M, G, H), hp, prior, report)


def _outer_step(data, cfg, prior, hp, M, G, H, R_fixed, C_fixed, degenerate, report):
    """One sweep over mean, covariance, precisions and noise; returns the new state."""
    sigma2, gamma = hp.sigma2, hp.gamma
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        mres = solve_mean(data, prior, sigma2, gamma, cfg.mean, M0=M)
        M = mres.M
        report.block_iters["mean"].append(mres.iters)

        if not degenerate:
            cres = fit_covariance(data, prior, sigma2, cfg.cov_tol, cfg.cov_max_iter, H0=H)
            G, H = cres.G, cres.H
            report.block_iters["covariance"].append(cres.iters)

        pres = update_precisions(
            M, G, H, prior, hp.lambda_r, hp.lambda_c,
            fixed_R_inv=R_fixed, fixed_C_inv=C_fixed, cfg=cfg.glasso,
            tol=cfg.precision_tol, max_sweeps=cfg.precision_max_sweeps,
        )
        report.block_iters["precision"].append(pres.sweeps)
    for w in caught:
        if issubclass(w.category, ConvergenceWarning):
            msg = f"inner: {str(w.message).split(' (')[0]}"
            if msg not in report.flags:
                report.flags.append(msg)
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    if pres.R_inv is not prior.R_inv or pres.C_inv is not prior.C_inv:
        prior = PriorPrecisions(pres.R_inv, pres.C_inv)

    post = Postdata(M, G, H)
    if cfg.learn_sigma2:
        sigma2 = update_sigma2(data, post, cfg.sigma2_denominator)
        if sigma2 == SIGMA2_FLOOR and "sigma2 clamped" not in report.flags:
            report.flags.append("sigma2 clamped")
    hp = Hyperparams(sigma2, gamma, hp.lambda_r, hp.lambda_c)
    J = master_objective(data, post, prior, hp, cfg.sigma2_denominator)
    return M, G, H, prior, hp, J
