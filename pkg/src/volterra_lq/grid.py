"""Uniform time grids and the grid sampling of problem data.

Paths on the grid are stacked time-major: block ``j`` of a path started at
index ``k`` holds ``x(s_{k+j})``, so restricting a path to a later start is a
prefix drop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpecError
from .model import KERNEL_NAMES, ProblemSpec, eval_kernel


@dataclass(frozen=True, eq=False)
class TimeGrid:
    t0: float
    T: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise SpecError(f"grid needs N >= 1 steps, got {self.N}")
        if not self.t0 < self.T:
            raise SpecError(f"grid needs t0 < T, got t0={self.t0}, T={self.T}")
        nodes = self.t0 + np.arange(self.N + 1) * ((self.T - self.t0) / self.N)
        nodes[-1] = self.T
        nodes.setflags(write=False)
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "_nodes", nodes)

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    def restrict(self, k: int) -> "TimeGrid":
        """Grid on ``[s_k, T]`` sharing the step of this one."""
        if not 0 <= k < self.N:
            raise SpecError(f"restriction index must be in [0, {self.N}), got {k}")
        return TimeGrid(float(self.nodes[k]), self.T, self.N - k)

    def to_dict(self):
        return {"t0": self.t0, "T": self.T, "N": self.N}


def build_grid(t0: float, T: float, N: int) -> TimeGrid:
    return TimeGrid(float(t0), float(T), N)


@dataclass(frozen=True, eq=False)
class DiscretePath:
    start: int
    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size == 0 or values.size % self.n:
            raise SpecError(f"path length {values.size} is not a positive multiple of n={self.n}")
        object.__setattr__(self, "values", values)

    @property
    def blocks(self) -> np.ndarray:
        return self.values.reshape(-1, self.n)

    def restrict(self) -> "DiscretePath":
        """Drop the first block: the same path seen from the next grid node."""
        if self.blocks.shape[0] == 1:
            raise SpecError("cannot restrict a single-block path")
        return DiscretePath(self.start + 1, self.n, self.values[self.n:])

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class SampledCoefficients:
    """Kernels at ``(s_j, s_k)`` for ``j >= k`` and weights at the left nodes.

    ``A[j, k]`` etc. are zero above the diagonal (``j < k``); ``Q[k]``, ``R[k]``
    cover ``k = 0..N-1``.
    """

    n: int
    m: int
    h: float
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    def kernel(self, which):
        return getattr(self, which)

    def restrict(self, k: int) -> "SampledCoefficients":
        """Data of the subproblem on ``[s_k, T]``."""
        if not 0 <= k < self.N:
            raise SpecError(f"restriction index must be in [0, {self.N}), got {k}")
        return SampledCoefficients(
            n=self.n, m=self.m, h=self.h,
            A=self.A[k:, k:], B=self.B[k:, k:], C=self.C[k:, k:], D=self.D[k:, k:],
            Q=self.Q[k:], R=self.R[k:], G=self.G)

    def control_free(self, tol: float = 0.0) -> bool:
        """True when the drift control kernel vanishes on every sampled pair."""
        return bool(np.max(np.abs(self.B), initial=0.0) <= tol)


def _sym(mat):
    return 0.5 * (mat + mat.T)


def sample_spec(spec: ProblemSpec, grid: TimeGrid) -> SampledCoefficients:
    """Tabulate kernels (left-endpoint convention) and weights on ``grid``."""
    if abs(grid.t0 - spec.t0) > 1e-12 or abs(grid.T - spec.T) > 1e-12:
        raise SpecError(f"grid [{grid.t0}, {grid.T}] does not match horizon "
                        f"[{spec.t0}, {spec.T}]")
    N, n, m = grid.N, spec.n, spec.m
    s = grid.nodes
    shapes = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m)}
    tables = {}
    for name in KERNEL_NAMES:
        tab = np.zeros((N + 1, N + 1) + shapes[name])
        for k in range(N + 1):
            for j in range(k, N + 1):
                tab[j, k] = eval_kernel(spec, name, s[j], s[k], h_min=grid.h)
        tab.setflags(write=False)
        tables[name] = tab
    Q = np.stack([_sym(spec.Q.at(s[k])) for k in range(N)])
    R = np.stack([_sym(spec.R.at(s[k])) for k in range(N)])
    return SampledCoefficients(n=n, m=m, h=grid.h, Q=Q, R=R, G=_sym(spec.G.copy()), **tables)


def discretize_path(x, grid: TimeGrid, k: int = 0) -> DiscretePath:
    """Sample a free path at ``s_k, ..., s_N``.

    ``x`` is a :class:`~volterra_lq.model.FreePath` or a callable returning an
    ``n``-vector.
    """
    if not 0 <= k <= grid.N:
        raise SpecError(f"start index must be in [0, {grid.N}], got {k}")
    nodes = grid.nodes[k:]
    if hasattr(x, "at"):
        if x.times.size == 0:
            raise SpecError("free path has no samples")
        blocks = np.asarray(x.at(nodes), dtype=float)
    else:
        blocks = np.array([np.atleast_1d(x(t)) for t in nodes], dtype=float)
    blocks = blocks.reshape(nodes.size, -1)
    return DiscretePath(k, blocks.shape[1], blocks.reshape(-1))
