"""Path-dependent Riccati equation on a uniform grid.

The forecast vector ``chi_k = (X(s_k|s_k), ..., X(s_N|s_k))`` of the state
(conditional on information at ``s_k`` with future controls and noise frozen
to zero) evolves as a Markov chain of shrinking dimension:

    chi_{k+1} = F_k chi_k + Gu_k u_k + (H_k chi_k + L_k u_k) xi_k,

with ``E[xi_k] = 0`` and ``E[xi_k^2] = h``.  The value function is
``V_k(chi) = 1/2 chi' P_k chi`` and the optimal law is ``u_k = Theta_k chi_k``.
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg as sla

from .errors import ConvergenceError, RegularityError, SpecError
from .grid import DiscretePath, SampledCoefficients, TimeGrid

FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class LiftedSystem:
    n: int
    m: int
    N: int
    h: float
    E: List[np.ndarray]
    F: List[np.ndarray]
    Gu: List[np.ndarray]
    H: List[np.ndarray]
    L: List[np.ndarray]

    def dim(self, k: int) -> int:
        """Length of the forecast vector at step ``k``."""
        return (self.N - k + 1) * self.n


def build_lifted(coeffs: SampledCoefficients, grid: Optional[TimeGrid] = None) -> LiftedSystem:
    N, n, m, h = coeffs.N, coeffs.n, coeffs.m, coeffs.h
    if grid is not None and (grid.N != N or abs(grid.h - h) > 1e-14 * max(1.0, h)):
        raise SpecError(f"grid (N={grid.N}, h={grid.h}) does not match coefficients "
                        f"(N={N}, h={h})")
    E, F, Gu, H, L = [], [], [], [], []
    for k in range(N):
        d = (N - k + 1) * n
        sel = np.zeros((n, d))
        sel[:, :n] = np.eye(n)
        # rows j = k+1..N of the stacked kernel columns
        a = coeffs.A[k + 1:, k].reshape(-1, n)
        b = coeffs.B[k + 1:, k].reshape(-1, m)
        c = coeffs.C[k + 1:, k].reshape(-1, n)
        dd = coeffs.D[k + 1:, k].reshape(-1, m)
        drift = np.zeros((d - n, d))
        drift[:, :n] = h * a
        drift[:, n:] += np.eye(d - n)
        diff = np.zeros((d - n, d))
        diff[:, :n] = c
        E.append(sel)
        F.append(drift)
        Gu.append(h * b)
        H.append(diff)
        L.append(dd.copy())
    return LiftedSystem(n=n, m=m, N=N, h=h, E=E, F=F, Gu=Gu, H=H, L=L)


@dataclass(eq=False)
class RiccatiSolution:
    n: int
    m: int
    grid: TimeGrid
    P: List[np.ndarray]
    Theta: List[np.ndarray]
    regularity_margin: float

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def h(self) -> float:
        return self.grid.h

    # -- JSON ---------------------------------------------------------------
    def to_dict(self):
        return {
            "version": FORMAT_VERSION,
            "n": self.n,
            "m": self.m,
            "grid": self.grid.to_dict(),
            "P": [_encode(p[np.tril_indices(p.shape[0])]) for p in self.P],
            "Theta": [_encode(t.reshape(-1)) for t in self.Theta],
            "regularity_margin": float.hex(float(self.regularity_margin)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data):
        if data.get("version") != FORMAT_VERSION:
            raise SpecError(f"unsupported solution format version {data.get('version')!r}")
        n, m = int(data["n"]), int(data["m"])
        g = data["grid"]
        grid = TimeGrid(float(g["t0"]), float(g["T"]), int(g["N"]))
        P = []
        for k, enc in enumerate(data["P"]):
            d = (grid.N - k + 1) * n
            tri = _decode(enc)
            mat = np.zeros((d, d))
            mat[np.tril_indices(d)] = tri
            P.append(mat + np.tril(mat, -1).T)
        Theta = [_decode(enc).reshape(m, (grid.N - k + 1) * n)
                 for k, enc in enumerate(data["Theta"])]
        return cls(n=n, m=m, grid=grid, P=P, Theta=Theta,
                   regularity_margin=float.fromhex(data["regularity_margin"]))

    @classmethod
    def from_json(cls, text: str) -> "RiccatiSolution":
        return cls.from_dict(json.loads(text))


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode(text: str) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").copy()


def _sym(mat):
    return 0.5 * (mat + mat.T)


def _step_terms(lifted, coeffs, k, P_next):
    """Reduced control weight and cross term of the one-step minimization."""
    h = lifted.h
    Gu, L, F, H = lifted.Gu[k], lifted.L[k], lifted.F[k], lifted.H[k]
    PGu = P_next @ Gu
    PL = P_next @ L
    Rhat = h * coeffs.R[k] + Gu.T @ PGu + h * (L.T @ PL)
    S = PGu.T @ F + h * (PL.T @ H)
    return _sym(Rhat), S


def _factor(Rhat, k):
    try:
        return sla.cho_factor(Rhat, lower=True)
    except sla.LinAlgError:
        eig = float(np.linalg.eigvalsh(Rhat)[0])
        raise RegularityError(
            f"reduced control weight not positive definite at step k={k} "
            f"(smallest eigenvalue {eig:.6g})", step=k, min_eig=eig) from None


def solve_dp(lifted: LiftedSystem, coeffs: SampledCoefficients,
             grid: Optional[TimeGrid] = None) -> RiccatiSolution:
    """Backward Riccati recursion; raises :class:`RegularityError` if strong regularity fails."""
    N, h = lifted.N, lifted.h
    if grid is None:
        grid = TimeGrid(0.0, N * h, N)
    P: List[Optional[np.ndarray]] = [None] * (N + 1)
    Theta: List[Optional[np.ndarray]] = [None] * N
    P[N] = coeffs.G.copy()
    margin = np.inf
    for k in range(N - 1, -1, -1):
        Pn = P[k + 1]
        Rhat, S = _step_terms(lifted, coeffs, k, Pn)
        fac = _factor(Rhat, k)
        margin = min(margin, float(np.linalg.eigvalsh(Rhat)[0]) / h)
        gain = sla.cho_solve(fac, S)
        Theta[k] = -gain
        F, H, E = lifted.F[k], lifted.H[k], lifted.E[k]
        Pk = h * (E.T @ coeffs.Q[k] @ E) + F.T @ Pn @ F + h * (H.T @ Pn @ H) - S.T @ gain
        P[k] = _sym(Pk)
    return RiccatiSolution(n=lifted.n, m=lifted.m, grid=grid, P=P, Theta=Theta,
                           regularity_margin=margin)


def lyapunov_step(lifted: LiftedSystem, coeffs: SampledCoefficients, Psi) -> List[np.ndarray]:
    """Cost kernels of the closed loop ``u_k = -Psi_k chi_k``."""
    N, h = lifted.N, lifted.h
    if len(Psi) != N:
        raise SpecError(f"need {N} feedback matrices, got {len(Psi)}")
    P = [None] * (N + 1)
    P[N] = coeffs.G.copy()
    for k in range(N - 1, -1, -1):
        psi = np.asarray(Psi[k], dtype=float)
        if psi.shape != (lifted.m, lifted.dim(k)):
            raise SpecError(f"Psi[{k}] has shape {psi.shape}, "
                            f"expected {(lifted.m, lifted.dim(k))}")
        Pn = P[k + 1]
        drift = lifted.F[k] - lifted.Gu[k] @ psi
        diff = lifted.H[k] - lifted.L[k] @ psi
        E = lifted.E[k]
        Pk = (h * (E.T @ coeffs.Q[k] @ E) + h * (psi.T @ coeffs.R[k] @ psi)
              + drift.T @ Pn @ drift + h * (diff.T @ Pn @ diff))
        P[k] = _sym(Pk)
    return P


def _greedy(lifted, coeffs, P):
    Psi, margin = [], np.inf
    for k in range(lifted.N):
        Rhat, S = _step_terms(lifted, coeffs, k, P[k + 1])
        fac = _factor(Rhat, k)
        margin = min(margin, float(np.linalg.eigvalsh(Rhat)[0]) / lifted.h)
        Psi.append(sla.cho_solve(fac, S))
    return Psi, margin


@dataclass
class PicardTrace:
    P: List[List[np.ndarray]] = field(default_factory=list)
    Psi: List[List[np.ndarray]] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    monotonicity: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.P)

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("inf")

    @property
    def min_monotonicity(self) -> float:
        return min(self.monotonicity, default=float("inf"))


def _kernel_distance(P1, P2):
    return max(float(np.linalg.norm(a - b, 2)) for a, b in zip(P1, P2))


def _min_gap(P_hi, P_lo):
    return min(float(np.linalg.eigvalsh(_sym(a - b))[0]) for a, b in zip(P_hi, P_lo))


def picard_solve(lifted: LiftedSystem, coeffs: SampledCoefficients, tol: float = 1e-10,
                 max_iter: int = 50, grid: Optional[TimeGrid] = None):
    """Alternate Lyapunov solves and feedback updates, starting from zero feedback.

    Iteration ``i`` computes ``P^(i)`` as the closed-loop cost kernel of
    ``Psi^(i-1)`` and then ``Psi^(i)`` as the minimizing feedback against
    ``P^(i)``.  The kernels decrease monotonically under the standard condition.
    Returns ``(RiccatiSolution, PicardTrace)``.
    """
    N, m = lifted.N, lifted.m
    if grid is None:
        grid = TimeGrid(0.0, N * lifted.h, N)
    trace = PicardTrace()
    Psi = [np.zeros((m, lifted.dim(k))) for k in range(N)]
    P_prev = None
    for _ in range(max_iter):
        P = lyapunov_step(lifted, coeffs, Psi)
        Psi_new, margin = _greedy(lifted, coeffs, P)
        if P_prev is not None:
            trace.residuals.append(_kernel_distance(P, P_prev))
            trace.monotonicity.append(_min_gap(P_prev, P))
        trace.P.append(P)
        trace.Psi.append(Psi_new)
        if P_prev is not None and trace.residuals[-1] <= tol:
            break
        if all(np.array_equal(a, b) for a, b in zip(Psi, Psi_new)):
            # feedback is a fixed point: the next Lyapunov solve returns P unchanged
            trace.residuals.append(0.0)
            trace.monotonicity.append(0.0)
            break
        P_prev, Psi = P, Psi_new
    else:
        raise ConvergenceError(
            f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations "
            f"(last residual {trace.final_residual:.3g})", trace.residuals)
    sol = RiccatiSolution(n=lifted.n, m=m, grid=grid, P=trace.P[-1],
                          Theta=[-psi for psi in trace.Psi[-1]], regularity_margin=margin)
    return sol, trace


def _as_vector(chi, expected_len, k=None):
    if isinstance(chi, DiscretePath):
        if k is not None and chi.start != k:
            raise SpecError(f"path starts at index {chi.start}, expected {k}")
        vec = chi.values
    else:
        vec = np.asarray(chi, dtype=float).reshape(-1)
    if vec.size != expected_len:
        raise SpecError(f"path has length {vec.size}, expected {expected_len}")
    return vec


def feedback_control(sol: RiccatiSolution, k: int, chi) -> np.ndarray:
    """Optimal control at step ``k`` for forecast ``chi``."""
    if not 0 <= k < sol.N:
        raise SpecError(f"step must be in [0, {sol.N}), got {k}")
    theta = sol.Theta[k]
    return theta @ _as_vector(chi, theta.shape[1], k)


def value_at(sol: RiccatiSolution, k: int, chi) -> float:
    if not 0 <= k <= sol.N:
        raise SpecError(f"step must be in [0, {sol.N}], got {k}")
    P = sol.P[k]
    vec = _as_vector(chi, P.shape[0], k)
    return 0.5 * float(vec @ P @ vec)


def solve_problem(spec, N: int, method: str = "dp", tol: float = 1e-10, max_iter: int = 50):
    """Grid, sample, lift and solve in one call.

    Returns ``(grid, coeffs, lifted, solution, trace)``; ``trace`` is ``None``
    for the dynamic-programming solver.
    """
    from .grid import build_grid, sample_spec

    grid = build_grid(spec.t0, spec.T, N)
    coeffs = sample_spec(spec, grid)
    lifted = build_lifted(coeffs, grid)
    if method == "dp":
        return grid, coeffs, lifted, solve_dp(lifted, coeffs, grid), None
    if method == "picard":
        sol, trace = picard_solve(lifted, coeffs, tol=tol, max_iter=max_iter, grid=grid)
        return grid, coeffs, lifted, sol, trace
    raise SpecError(f"unknown solver {method!r}; expected 'dp' or 'picard'")


# -- bilinear-form norms over the sup-norm unit ball ------------------------

MAX_NORM_DIM = 14


def _sign_matrix(d):
    idx = np.arange(2 ** d)
    return 1.0 - 2.0 * ((idx[None, :] >> np.arange(d)[:, None]) & 1)


def _definite_masks(P):
    """Index sets F with P[F, F] positive or negative definite (hereditary search)."""
    d = P.shape[0]
    found = []
    frontier = []
    for i in range(d):
        if P[i, i] != 0.0:
            frontier.append(((i,), 1.0 if P[i, i] > 0 else -1.0))
    while frontier:
        found.extend(frontier)
        nxt = []
        for idx, sign in frontier:
            for j in range(idx[-1] + 1, d):
                cand = idx + (j,)
                try:
                    np.linalg.cholesky(sign * P[np.ix_(cand, cand)])
                except np.linalg.LinAlgError:
                    continue
                nxt.append((cand, sign))
        frontier = nxt
    return [idx for idx, _ in found]


def bilinear_norms(P) -> tuple:
    """Norms of ``(x, y) -> x' P y`` on ``{|x|_inf <= 1}``.

    Returns ``(sup |x'Px|, sup |x'Py|)``.  The second is bilinear, so its sup
    sits at sign vectors and ``max_y |x'Py| = |Px|_1``.  The first is attained
    either at a vertex or at a stationary point of a face on which ``P`` is
    definite; all such candidates are enumerated, which is exact.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise SpecError(f"expected a square matrix, got shape {P.shape}")
    if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.abs(P).max(initial=0))):
        raise SpecError("bilinear_norms needs a symmetric matrix")
    d = P.shape[0]
    if d > MAX_NORM_DIM:
        raise SpecError(f"dimension {d} exceeds exact enumeration limit {MAX_NORM_DIM}; "
                        "estimate with random sign sampling instead")
    if d == 0:
        return 0.0, 0.0
    P = _sym(P)
    signs = _sign_matrix(d)
    PS = P @ signs
    l2 = float(np.max(np.abs(PS).sum(axis=0)))
    quad = float(np.max(np.abs(np.einsum("ij,ij->j", signs, PS))))
    for free in _definite_masks(P):
        free = list(free)
        bound = [i for i in range(d) if i not in free]
        if bound:
            sb = _sign_matrix(len(bound))
            rhs = -P[np.ix_(free, bound)] @ sb
        else:
            sb = np.zeros((0, 1))
            rhs = np.zeros((len(free), 1))
        xf = np.linalg.solve(P[np.ix_(free, free)], rhs)
        ok = np.all(np.abs(xf) <= 1.0 + 1e-12, axis=0)
        if not np.any(ok):
            continue
        x = np.zeros((d, int(ok.sum())))
        x[free] = np.clip(xf[:, ok], -1.0, 1.0)
        x[bound] = sb[:, ok]
        vals = np.einsum("ij,ij->j", x, P @ x)
        quad = max(quad, float(np.max(np.abs(vals))))
    return quad, l2
