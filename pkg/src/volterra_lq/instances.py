"""Random and benchmark problem instances."""
from __future__ import annotations

import numpy as np

from .grid import build_grid
from .model import FreePath, KernelSpec, ProblemSpec, TimeWeight, constant_problem

BENCHMARK = dict(a=0.3, b=0.5, c=0.2, d=0.4, q=1.0, r=1.0, g=1.0)


def random_psd(rng, n, scale=1.0):
    M = rng.uniform(-1.0, 1.0, size=(n, n))
    return scale * (M @ M.T) / n


def random_instance(rng, n=1, m=1, N=3, T=1.0, zero_B=False, kernel_scale=1.0) -> ProblemSpec:
    """Tabulated kernels with entries uniform in [-1, 1] on the grid of ``N`` steps.

    Weights satisfy the standard condition: ``R = I + diag(U[0, 1])``,
    ``Q`` and ``G`` random positive semidefinite.
    """
    grid = build_grid(0.0, T, N)
    times = grid.nodes
    shapes = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m)}
    kernels = {}
    for name, shape in shapes.items():
        vals = kernel_scale * rng.uniform(-1.0, 1.0, size=(N + 1, N + 1) + shape)
        vals[np.triu_indices(N + 1, 1)] = 0.0
        if name == "B" and zero_B:
            vals[:] = 0.0
        kernels[name] = KernelSpec.tabulated(times, vals)
    R = np.eye(m) + np.diag(rng.uniform(0.0, 1.0, size=m))
    path = FreePath(times, rng.uniform(-1.0, 1.0, size=(N + 1, n)))
    return ProblemSpec(n=n, m=m, t0=0.0, T=T, Q=TimeWeight.constant(random_psd(rng, n)),
                       R=TimeWeight.constant(R), G=random_psd(rng, n), free_path=path,
                       **kernels)


def benchmark_scalar(x=1.0, T=1.0) -> ProblemSpec:
    """Constant-coefficient scalar instance ``(a,b,c,d,q,r,g) = (0.3,0.5,0.2,0.4,1,1,1)``."""
    p = BENCHMARK
    return constant_problem(p["a"], p["b"], p["c"], p["d"], p["q"], p["r"], p["g"], x, T=T)
