"""Metrics, baselines, grid selection and the replicated simulation experiment."""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .core import Dataset, Hyperparams, gaussian_holdout_loglik, inv_pd
from .errors import ConfigError, DimMismatchError, KronMTLError, MalformedOneHotError, NumericalError
from .fit import FitConfig, fit, predict
from .nuclear import MeanSolveConfig, solve_mean
from .precision import GlassoConfig, glasso
from .simgen import SimSpec, gen_dataset

MODELS = ("glasso", "ridge", "nucnorm", "mvg", "mvg-corr", "mvg-rank")
PREDICTIVE = ("ridge", "nucnorm", "mvg", "mvg-corr", "mvg-rank")
STRUCTURE = ("glasso", "mvg", "mvg-corr", "mvg-rank")
DEFAULT_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0)
THREADS_ENV = "KRONMTL_THREADS"


# -- metrics ---------------------------------------------------------------

def r_squared(Y_true, Y_pred, train_col_means) -> float:
    """Pooled ``1 - SSE/SST`` with SST taken around the training column means.

    Returns NaN when SST is zero (the response equals the reference).
    """
    Y_true = np.atleast_2d(np.asarray(Y_true, dtype=float))
    Y_pred = np.atleast_2d(np.asarray(Y_pred, dtype=float))
    if Y_true.shape != Y_pred.shape:
        raise DimMismatchError(f"shapes differ: {Y_true.shape} vs {Y_pred.shape}")
    mu = np.broadcast_to(np.asarray(train_col_means, dtype=float), Y_true.shape)
    sst = float(np.sum((Y_true - mu) ** 2))
    if sst == 0:
        return math.nan
    return 1.0 - float(np.sum((Y_pred - Y_true) ** 2)) / sst


def auc_rank_sum(labels, scores) -> float:
    """ROC AUC via the Mann-Whitney rank sum, ties counted as one half.

    Returns 0.5 when only one class is present.
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def structure_auc(true_prec, est_prec, threshold: float = 1e-6) -> float:
    """AUC of ``|est|`` against the support of ``true`` over the strict upper triangle."""
    true_prec = np.asarray(true_prec, dtype=float)
    est_prec = np.asarray(est_prec, dtype=float)
    if true_prec.shape != est_prec.shape or true_prec.shape[0] != true_prec.shape[1]:
        raise DimMismatchError("precision matrices must be square and of equal size")
    iu = np.triu_indices(true_prec.shape[0], 1)
    return auc_rank_sum(np.abs(true_prec[iu]) > threshold, np.abs(est_prec[iu]))


def accuracy_1ofk(Y_true_onehot, Y_scores, return_ties: bool = False):
    """Fraction of rows whose arg-max score hits the true class.

    Ties in a score row go to the lowest index; with ``return_ties`` the number
    of tied rows is returned as well.
    """
    T = np.atleast_2d(np.asarray(Y_true_onehot, dtype=float))
    S = np.atleast_2d(np.asarray(Y_scores, dtype=float))
    if T.shape != S.shape:
        raise DimMismatchError(f"shapes differ: {T.shape} vs {S.shape}")
    if not (np.all((T == 0) | (T == 1)) and np.all(T.sum(axis=1) == 1)):
        raise MalformedOneHotError("every row of the truth must contain exactly one 1")
    pred = np.argmax(S, axis=1)
    acc = float(np.mean(pred == np.argmax(T, axis=1)))
    if return_ties:
        ties = int(np.sum(np.sum(S == S.max(axis=1, keepdims=True), axis=1) > 1))
        return acc, ties
    return acc


def onehot_argmax(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    out = np.zeros_like(Y)
    out[np.arange(Y.shape[0]), np.argmax(Y, axis=1)] = 1.0
    return out


# -- baselines -------------------------------------------------------------

def ridge_fit(data: Dataset, lam: float) -> np.ndarray:
    """``argmin |Y - XM|_F^2 + lam |M|_F^2`` through the smaller normal system."""
    if not lam > 0:
        raise ValueError("ridge needs lam > 0")
    X, Y = data.X, data.Y
    N, D = X.shape
    if D <= N:
        return np.linalg.solve(data.gram + lam * np.eye(D), data.XtY)
    return X.T @ np.linalg.solve(X @ X.T + lam * np.eye(N), Y)


def nucnorm_fit(data: Dataset, lam: float, cfg: Optional[MeanSolveConfig] = None) -> np.ndarray:
    """``argmin |Y - XM|_F^2 + lam |M|_*`` (no prior term, unit noise variance)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return solve_mean(data, None, 1.0, lam, cfg).M


def sample_covariance(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    Yc = Y - Y.mean(axis=0)
    return Yc.T @ Yc / Y.shape[0]


def glasso_baseline(Y_train, lam: float, cfg: Optional[GlassoConfig] = None) -> np.ndarray:
    """Graphical lasso on the (divisor-N) sample covariance of the responses."""
    return glasso(sample_covariance(Y_train), lam, cfg)


# -- model fitting and selection -------------------------------------------

@dataclass(frozen=True)
class ModelOptions:
    """How the harness fits each model family.

    ``row_precision``: ``"truth"`` holds the feature precision at its
    generating value, ``"identity"`` holds it at ``I``, ``"learn"`` estimates it.
    ``standardize`` divides the centered responses by their overall standard
    deviation before fitting (predictions are mapped back); off by default
    because the penalties and ``gamma`` are then on a different scale.
    """

    fit: FitConfig = field(default_factory=FitConfig)
    tie_lambdas: bool = True
    lambda_r: float = 0.0
    standardize: bool = False
    row_precision: str = "truth"


class FittedModel(NamedTuple):
    lam: float
    M: Optional[np.ndarray]
    C_inv: Optional[np.ndarray]
    column_means: Optional[np.ndarray]
    scale: float
    converged: bool


def fit_model(model: str, train: Dataset, lam: float, opts: ModelOptions = ModelOptions(),
              R_inv_fixed: Optional[np.ndarray] = None) -> FittedModel:
    """Fit one model at one penalty value on an uncentered training split."""
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}")
    data = train.centered_copy()
    mu = data.column_means
    scale = 1.0
    if opts.standardize:
        s = float(np.std(data.Y))
        scale = s if s > 0 else 1.0
    if scale != 1.0:
        data = Dataset(data.X, data.Y / scale, True, mu / scale)

    if model == "glasso":
        C_inv = glasso_baseline(data.Y, lam, opts.fit.glasso)
        return FittedModel(lam, None, C_inv, mu, scale, True)
    if model == "ridge":
        return FittedModel(lam, ridge_fit(data, lam) * scale, None, mu, scale, True)
    if model == "nucnorm":
        return FittedModel(lam, nucnorm_fit(data, lam, opts.fit.mean) * scale, None, mu, scale, True)

    if opts.row_precision == "truth":
        fixed_R = R_inv_fixed
    elif opts.row_precision == "identity":
        fixed_R = np.eye(data.D)
    else:
        fixed_R = None
    lambda_r = lam if opts.tie_lambdas else opts.lambda_r
    cfg = replace(opts.fit, variant=model, fixed_row_precision=fixed_R)
    res = fit(data, Hyperparams(lambda_r=lambda_r, lambda_c=lam), cfg)
    return FittedModel(lam, res.post.M * scale, res.prior.C_inv, mu, scale, res.report.converged)


def score_model(model: str, fitted: FittedModel, val: Dataset, task: str = "regression") -> float:
    """Validation score used for selection (higher is better)."""
    if model == "glasso":
        # the precision was fitted on scaled responses
        Yc = (val.Y - fitted.column_means) / fitted.scale
        return gaussian_holdout_loglik(Yc, inv_pd(fitted.C_inv, "glasso precision"))
    pred = predict(fitted.M, val.X, fitted.column_means)
    if task == "classification":
        return accuracy_1ofk(val.Y, pred)
    return r_squared(val.Y, pred, fitted.column_means)


def grid_select(train: Dataset, val: Dataset, model: str, grid: Sequence[float],
                opts: ModelOptions = ModelOptions(), R_inv_fixed=None, task: str = "regression"):
    """Fit every grid value on ``train`` and keep the best validation score.

    Ties go to the smaller penalty; a cell that raises a numerical error
    scores ``-inf``.

    Returns
    -------
    best_lambda, fitted : FittedModel or None, scores : dict
    """
    if len(grid) == 0:
        raise ConfigError("lambda grid is empty")
    best = (-math.inf, None, None)
    scores = {}
    for lam in sorted(grid):
        try:
            fitted = fit_model(model, train, lam, opts, R_inv_fixed)
            sc = score_model(model, fitted, val, task)
            if math.isnan(sc):
                sc = -math.inf
        except (NumericalError, np.linalg.LinAlgError):
            fitted, sc = None, -math.inf
        scores[lam] = sc
        if fitted is not None and (best[1] is None or sc > best[0]):
            best = (sc, lam, fitted)
    return best[1], best[2], scores


# -- replicated experiment -------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    sim: SimSpec = field(default_factory=SimSpec)
    reps: int = 10
    lambda_grid: Tuple[float, ...] = DEFAULT_GRID
    models: Tuple[str, ...] = MODELS
    tie_lambdas: bool = True
    lambda_r: float = 0.0
    edge_threshold: float = 1e-6
    edge_stability_fraction: float = 0.7
    seed: int = 0
    task: str = "regression"
    standardize: bool = False
    row_precision: str = "truth"
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if len(self.lambda_grid) == 0:
            raise ConfigError("lambda_grid must not be empty")
        if any(not lam >= 0 for lam in self.lambda_grid):
            raise ConfigError("lambda_grid values must be nonnegative")
        if len(self.models) == 0:
            raise ConfigError("models must not be empty")
        bad = [m for m in self.models if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown models {bad}; choose from {list(MODELS)}")
        if self.task not in ("regression", "classification"):
            raise ConfigError("task must be 'regression' or 'classification'")
        if self.row_precision not in ("truth", "identity", "learn"):
            raise ConfigError("row_precision must be 'truth', 'identity' or 'learn'")
        if not 0 < self.edge_stability_fraction <= 1:
            raise ConfigError("edge_stability_fraction must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def options(self) -> ModelOptions:
        return ModelOptions(self.fit, self.tie_lambdas, self.lambda_r, self.standardize,
                            self.row_precision)


class CellResult(NamedTuple):
    model: str
    rep: int
    lam: Optional[float]
    r2: Optional[float]
    auc: Optional[float]
    accuracy: Optional[float]
    converged: Optional[bool]
    C_inv: Optional[np.ndarray]
    error: Optional[str]


@dataclass
class SummaryRow:
    model: str
    metric: str
    mean: float
    std: float
    values: List[float]
    lambdas: List[Optional[float]]


@dataclass
class ResultsTable:
    rows: List[SummaryRow]

    def get(self, model: str, metric: str) -> Optional[SummaryRow]:
        for row in self.rows:
            if row.model == model and row.metric == metric:
                return row
        return None

    def format(self) -> str:
        lines = [f"{'model':<10} {'metric':<9} {'mean':>8} {'(std)':>9}  n"]
        for r in self.rows:
            lines.append(f"{r.model:<10} {r.metric:<9} {r.mean:8.3f} ({r.std:.3f})  {len(r.values)}")
        return "\n".join(lines)


class ExperimentResult(NamedTuple):
    table: ResultsTable
    cells: List[CellResult]
    edge_counts: Dict[str, np.ndarray]
    stable_edges: Dict[str, List[Tuple[int, int]]]


def rep_seeds(seed: int, reps: int) -> List[int]:
    children = np.random.SeedSequence(seed).spawn(reps)
    return [int(c.generate_state(1)[0]) for c in children]


def make_rep_data(cfg: ExperimentConfig, rep: int):
    """Train/val/test splits and truth for one replication."""
    seed = rep_seeds(cfg.seed, cfg.reps)[rep]
    train, val, test, truth = gen_dataset(replace(cfg.sim, seed=seed))
    if cfg.task == "classification":
        train, val, test = (Dataset(d.X, onehot_argmax(d.Y)) for d in (train, val, test))
    return train, val, test, truth


def run_cell(cfg: ExperimentConfig, rep: int, model: str) -> CellResult:
    """Grid-select one model on one replication and score it on the test split."""
    train, val, test, truth = make_rep_data(cfg, rep)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lam, fitted, _ = grid_select(train, val, model, cfg.lambda_grid, cfg.options(),
                                         truth.R_inv_true, cfg.task)
    except KronMTLError as exc:
        return CellResult(model, rep, None, None, None, None, None, None, f"{type(exc).__name__}: {exc}")
    if fitted is None:
        return CellResult(model, rep, None, None, None, None, None, None, "every grid cell failed")
    r2 = acc = auc = None
    if fitted.M is not None:
        pred = predict(fitted.M, test.X, fitted.column_means)
        if cfg.task == "classification":
            acc = accuracy_1ofk(test.Y, pred)
        else:
            r2 = r_squared(test.Y, pred, fitted.column_means)
    if fitted.C_inv is not None and cfg.task == "regression":
        auc = structure_auc(truth.C_inv_true, fitted.C_inv, cfg.edge_threshold)
    return CellResult(model, rep, lam, r2, auc, acc, fitted.converged, fitted.C_inv, None)


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return
    threadpool_limits(1)


def _run_cell_star(args):
    return run_cell(*args)


def n_workers() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1")
        return n
    return os.cpu_count() or 1


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    """Replicate the simulation study and aggregate test metrics.

    Cells (replication x model) run in a process pool of ``workers``
    (default: ``KRONMTL_THREADS`` or the CPU count); aggregation is in
    (rep, model) order, so the output does not depend on scheduling.
    """
    tasks = [(cfg, rep, model) for rep in range(cfg.reps) for model in cfg.models]
    workers = workers or n_workers()
    if workers <= 1:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(1):
            cells = [run_cell(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_threads) as ex:
            cells = list(ex.map(_run_cell_star, tasks))
    return aggregate(cfg, cells)


def aggregate(cfg: ExperimentConfig, cells: List[CellResult]) -> ExperimentResult:
    rows: List[SummaryRow] = []
    metrics = ("accuracy",) if cfg.task == "classification" else ("r2", "auc")
    for model in cfg.models:
        mine = [c for c in cells if c.model == model]
        for metric in metrics:
            vals = [(getattr(c, metric), c.lam) for c in mine
                    if getattr(c, metric) is not None and not math.isnan(getattr(c, metric))]
            if not vals:
                continue
            v = np.array([x for x, _ in vals])
            rows.append(SummaryRow(model, metric, float(v.mean()), float(v.std()),
                                   [float(x) for x in v], [lam for _, lam in vals]))
    K = cfg.sim.K
    iu = np.triu_indices(K, 1)
    counts: Dict[str, np.ndarray] = {}
    stable: Dict[str, List[Tuple[int, int]]] = {}
    for model in cfg.models:
        if model not in STRUCTURE or cfg.task != "regression":
            continue
        cnt = np.zeros((K, K), dtype=int)
        for c in cells:
            if c.model == model and c.C_inv is not None:
                sel = np.abs(c.C_inv[iu]) > cfg.edge_threshold
                cnt[iu[0][sel], iu[1][sel]] += 1
        counts[model] = cnt
        cut = cfg.edge_stability_fraction * cfg.reps
        stable[model] = [(int(i), int(j)) for i, j in zip(*iu) if cnt[i, j] >= cut]
    return ExperimentResult(ResultsTable(rows), cells, counts, stable)
