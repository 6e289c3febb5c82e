import numpy as np
import pytest

from volterra_lq.grid import build_grid, discretize_path, sample_spec
from volterra_lq.instances import random_instance
from volterra_lq.oracle import ScenarioTree
from volterra_lq.riccati import build_lifted, solve_dp


class Instance:
    """A sampled problem with its lifted system, DP solution and scenario tree."""

    def __init__(self, spec, N):
        self.spec = spec
        self.grid = build_grid(spec.t0, spec.T, N)
        self.coeffs = sample_spec(spec, self.grid)
        self.lifted = build_lifted(self.coeffs, self.grid)
        self.chi0 = discretize_path(spec.free_path, self.grid, 0)
        self.tree = ScenarioTree(N, self.grid.h) if N <= 12 else None
        self._sol = None

    @property
    def sol(self):
        if self._sol is None:
            self._sol = solve_dp(self.lifted, self.coeffs, self.grid)
        return self._sol


def make_instance(seed, n=1, m=1, N=3, **kw):
    rng = np.random.default_rng(seed)
    return Instance(random_instance(rng, n=n, m=m, N=N, **kw), N)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def inst():
    return make_instance(11, n=2, m=1, N=3)


def direct_forecasts(coeffs, x, u, xi):
    """Forecast vectors along one path by the plain double-loop Euler scheme.

    ``x`` is the (N+1, n) free-path block array, ``u`` the (N, m) controls and
    ``xi`` the N increments.  Returns ``chi[k]`` for k = 0..N; the first block
    of ``chi[k]`` is the state at step k.
    """
    N, h = coeffs.N, coeffs.h
    X = np.zeros_like(x)
    for j in range(N + 1):
        acc = x[j].copy()
        for l in range(j):
            acc += (coeffs.A[j, l] @ X[l] + coeffs.B[j, l] @ u[l]) * h \
                + (coeffs.C[j, l] @ X[l] + coeffs.D[j, l] @ u[l]) * xi[l]
        X[j] = acc
    chis = []
    for k in range(N + 1):
        blocks = []
        for j in range(k, N + 1):
            acc = x[j].copy()
            for l in range(k):
                acc += (coeffs.A[j, l] @ X[l] + coeffs.B[j, l] @ u[l]) * h \
                    + (coeffs.C[j, l] @ X[l] + coeffs.D[j, l] @ u[l]) * xi[l]
            blocks.append(acc)
        chis.append(np.concatenate(blocks))
    return X, chis


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[cid])
