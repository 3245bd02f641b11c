import numpy as np
import pytest

from kronmtl.core import Dataset, PriorPrecisions


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    return (Q * ev) @ Q.T


def random_problem(rng, N=6, D=4, K=3, centered=False):
    X = rng.standard_normal((N, D))
    Y = rng.standard_normal((N, K))
    data = Dataset.centered_from(X, Y) if centered else Dataset(X, Y)
    prior = PriorPrecisions(random_spd(rng, D), random_spd(rng, K))
    return data, prior


def central_diff(f, A, h=1e-5):
    """Entrywise central differences of scalar ``f`` at the array ``A``."""
    A = np.asarray(A, dtype=float)
    g = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        E = np.zeros_like(A)
        E[idx] = h
        g[idx] = (f(A + E) - f(A - E)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
