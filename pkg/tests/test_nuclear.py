import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kronmtl.core import Dataset, PriorPrecisions, exact_posterior, unvec
from kronmtl.errors import ConvergenceWarning
from kronmtl.nuclear import (MeanSolveConfig, mean_objective, numerical_rank, smooth_gradient,
                             solve_mean, spectral_norm_psd, svt_prox)

from conftest import central_diff, random_problem


def test_svt_diagonal():
    out = svt_prox(np.diag([3.0, 1.0]), 2.0)
    assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)


def test_svt_tau_zero(rng):
    A = rng.standard_normal((5, 3))
    assert np.allclose(svt_prox(A, 0.0), A, atol=1e-10)


def test_svt_minimizes_prox_objective(rng):
    A = rng.standard_normal((4, 3))
    tau = 0.7

    def obj(Z):
        return 0.5 * np.sum((Z - A) ** 2) + tau * np.linalg.svd(Z, compute_uv=False).sum()

    Z = svt_prox(A, tau)
    f0 = obj(Z)
    for _ in range(500):
        P = rng.standard_normal(A.shape) * rng.choice([1e-4, 1e-2, 1e-1])
        assert obj(Z + P) >= f0 - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 3.0))
def test_svt_nonexpansive(seed, tau):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, 5, 4))
    assert np.linalg.norm(svt_prox(A, tau) - svt_prox(B, tau)) <= np.linalg.norm(A - B) + 1e-12


def test_spectral_norm_matches_eigvalsh(rng):
    B = rng.standard_normal((30, 20))
    A = B.T @ B
    assert spectral_norm_psd(A) == pytest.approx(np.linalg.eigvalsh(A)[-1], rel=1e-8)
    assert spectral_norm_psd(np.zeros((3, 3))) == 0.0


def test_gradient_zero_data():
    d = Dataset(np.ones((3, 2)), np.zeros((3, 2)))
    g = smooth_gradient(np.zeros((2, 2)), d, PriorPrecisions.identity(2, 2), 1.0)
    assert np.all(g == 0)


def test_gradient_scalar_stationary():
    d = Dataset([[1.0]], [[1.0]])
    g = smooth_gradient([[0.5]], d, PriorPrecisions.identity(1, 1), 1.0)
    assert g[0, 0] == 0.0


def test_gradient_finite_differences(rng):
    data, prior = random_problem(rng, N=5, D=3, K=2)
    M = rng.standard_normal((3, 2))
    g = smooth_gradient(M, data, prior, 0.8)
    fd = central_diff(lambda A: mean_objective(A, data, prior, 0.8, 0.0), M)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("rule", ["fixed_lipschitz", "backtracking"])
def test_gamma_zero_matches_closed_form(rng, rule):
    data, prior = random_problem(rng, N=7, D=5, K=3)
    mu, _ = exact_posterior(data, prior, 0.5)
    M_ref = unvec(mu, 5, 3)
    res = solve_mean(data, prior, 0.5, 0.0, MeanSolveConfig(tol=1e-12, step_rule=rule))
    assert np.linalg.norm(res.M - M_ref) / np.linalg.norm(M_ref) <= 1e-6
    assert res.converged


def test_zero_response_gives_zero(rng):
    data, prior = random_problem(rng)
    z = Dataset(data.X, np.zeros_like(data.Y))
    assert np.all(solve_mean(z, prior, 1.0, 0.5).M == 0)


def test_large_gamma_gives_zero(rng):
    data, prior = random_problem(rng, N=8, D=5, K=3)
    s2 = 0.7
    thresh = np.linalg.norm(2 / s2 * data.XtY, 2)
    res = solve_mean(data, prior, s2, thresh * 1.001)
    assert np.all(res.M == 0)
    f0 = mean_objective(res.M, data, prior, s2, thresh * 1.001)
    for _ in range(200):
        P = rng.standard_normal((5, 3)) * 1e-3
        assert mean_objective(P, data, prior, s2, thresh * 1.001) >= f0


def test_solution_satisfies_optimality(rng):
    # subgradient condition: -grad in gamma * d|M|_*, checked via the prox fixed point
    data, prior = random_problem(rng, N=10, D=6, K=4)
    s2, gamma = 0.5, 3.0
    M = solve_mean(data, prior, s2, gamma, MeanSolveConfig(tol=1e-13, max_iter=20000)).M
    t = 1e-3
    fixed = svt_prox(M - t * smooth_gradient(M, data, prior, s2), t * gamma)
    assert np.linalg.norm(fixed - M) <= 1e-7 * max(1.0, np.linalg.norm(M))


def test_objective_monotone_in_iterations(rng):
    data, prior = random_problem(rng, N=12, D=8, K=4)
    vals = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for m in range(1, 60):
            M = solve_mean(data, prior, 0.3, 2.0, MeanSolveConfig(tol=1e-14, max_iter=m)).M
            vals.append(mean_objective(M, data, prior, 0.3, 2.0))
    assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))


def test_rank_nonincreasing_in_gamma(rng):
    data, prior = random_problem(rng, N=15, D=6, K=5)
    ranks = []
    for g in [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0]:
        M = solve_mean(data, prior, 0.2, g, MeanSolveConfig(tol=1e-12, max_iter=20000)).M
        ranks.append(numerical_rank(M))
    assert ranks[0] == 5
    assert all(b <= a for a, b in zip(ranks, ranks[1:]))
    assert ranks[-1] == 0


def test_max_iter_warns(rng):
    data, prior = random_problem(rng, N=12, D=8, K=4)
    with pytest.warns(ConvergenceWarning):
        res = solve_mean(data, prior, 0.3, 1.0, MeanSolveConfig(max_iter=2))
    assert not res.converged and res.iters == 2


def test_no_prior_matches_pinv_when_gamma_zero(rng):
    # N > D: the unpenalized problem is ordinary least squares
    X = rng.standard_normal((20, 4))
    Y = rng.standard_normal((20, 3))
    d = Dataset(X, Y)
    M = solve_mean(d, None, 1.0, 0.0, MeanSolveConfig(tol=1e-13, max_iter=20000)).M
    assert np.allclose(M, np.linalg.pinv(X) @ Y, atol=1e-7)


def test_config_validation():
    from kronmtl.errors import ConfigError
    with pytest.raises(ConfigError):
        MeanSolveConfig(step_rule="newton")
    with pytest.raises(ConfigError):
        MeanSolveConfig(tol=0)
