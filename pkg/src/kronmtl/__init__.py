"""Multitask linear regression with matrix-variate Gaussian priors.

The weight matrix gets a prior whose covariance factorizes over features and
tasks; fitting alternates a nuclear-norm mean solve, a Kronecker-factored
covariance, sparse precision updates and the noise variance.
"""
from .core import (Dataset, Hyperparams, Postdata, PriorPrecisions, exact_posterior,
                   master_objective, unvec, vec)
from .errors import (ConfigError, ConvergenceWarning, DimMismatchError, KronMTLError,
                     MalformedOneHotError, NotPDError, NumericalError, SingularError)
from .evalkit import (ExperimentConfig, accuracy_1ofk, grid_select, r_squared, run_experiment,
                      structure_auc)
from .fit import FitConfig, FitResult, fit, predict, update_sigma2
from .kron import fit_covariance
from .nuclear import MeanSolveConfig, smooth_gradient, solve_mean, svt_prox
from .precision import GlassoConfig, glasso, update_precisions
from .simgen import SimSpec, chain_laplacian, gen_dataset, gen_sparse_precision

__all__ = [
    "Dataset",
    "Hyperparams",
    "Postdata",
    "PriorPrecisions",
    "exact_posterior",
    "master_objective",
    "unvec",
    "vec",
    "ConfigError",
    "ConvergenceWarning",
    "DimMismatchError",
    "KronMTLError",
    "MalformedOneHotError",
    "NotPDError",
    "NumericalError",
    "SingularError",
    "ExperimentConfig",
    "accuracy_1ofk",
    "grid_select",
    "r_squared",
    "run_experiment",
    "structure_auc",
    "FitConfig",
    "FitResult",
    "fit",
    "predict",
    "update_sigma2",
    "fit_covariance",
    "MeanSolveConfig",
    "smooth_gradient",
    "solve_mean",
    "svt_prox",
    "GlassoConfig",
    "glasso",
    "update_precisions",
    "SimSpec",
    "chain_laplacian",
    "gen_dataset",
    "gen_sparse_precision",
]

__version__ = "0.1.0"
