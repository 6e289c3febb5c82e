"""Classical stochastic LQ limit: constant kernels reduce the Volterra problem to an SDE.

With constant coefficients and a constant free path, the value at every node is
``1/2 x' Sigma(s) x`` where ``Sigma`` solves the matrix Riccati ODE

    Sigma' + Sigma A + A'Sigma + C'Sigma C + Q
        - (Sigma B + C'Sigma D)(R + D'Sigma D)^{-1}(B'Sigma + D'Sigma C) = 0,
    Sigma(T) = G.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import RegularityError, SpecError
from .model import as_matrix


@dataclass(frozen=True, eq=False)
class SdeRiccatiCurve:
    times: np.ndarray
    Sigma: np.ndarray  # (steps + 1, n, n), Sigma[-1] = G

    def at_index(self, i):
        return self.Sigma[i]


def _rhs(S, a, b, c, d, q, r, t):
    gain_w = r + d.T @ S @ d
    try:
        chol = np.linalg.cholesky(0.5 * (gain_w + gain_w.T))
    except np.linalg.LinAlgError:
        raise RegularityError(
            f"R + D'Sigma D lost positive definiteness at t={t:.6g}") from None
    cross = S @ b + c.T @ S @ d
    y = np.linalg.solve(chol, cross.T)
    return -(S @ a + a.T @ S + c.T @ S @ c + q - y.T @ y)


def integrate_riccati_ode(a, b, c, d, q, r, g, T: float, steps: int,
                          t0: float = 0.0) -> SdeRiccatiCurve:
    """Backward classical RK4 from ``Sigma(T) = g`` on ``steps`` uniform steps."""
    if steps < 1:
        raise SpecError(f"steps must be >= 1, got {steps}")
    a, c, q, g = (as_matrix(v) for v in (a, c, q, g))
    b, d, r = (as_matrix(v) for v in (b, d, r))
    n = a.shape[0]
    if np.linalg.eigvalsh(0.5 * (r + r.T))[0] <= 0:
        raise SpecError("control weight r must be positive definite")
    dt = (T - t0) / steps
    times = t0 + dt * np.arange(steps + 1)
    times[-1] = T
    out = np.empty((steps + 1, n, n))
    S = 0.5 * (g + g.T)
    out[steps] = S
    f = lambda S_, t_: _rhs(S_, a, b, c, d, q, r, t_)  # noqa: E731
    for i in range(steps, 0, -1):
        t = times[i]
        k1 = f(S, t)
        k2 = f(S - 0.5 * dt * k1, t - 0.5 * dt)
        k3 = f(S - 0.5 * dt * k2, t - 0.5 * dt)
        k4 = f(S - dt * k3, t - dt)
        S = S - dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        S = 0.5 * (S + S.T)
        out[i - 1] = S
    return SdeRiccatiCurve(times=times, Sigma=out)


@dataclass
class ReductionTable:
    rows: list  # (k, s_k, volterra_value, ode_value, abs_err)

    @property
    def max_error(self) -> float:
        return max(r[4] for r in self.rows)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "s_k", "volterra_value", "ode_value", "abs_err"])
            for k, s, v, o, e in self.rows:
                w.writerow([k, repr(s), repr(v), repr(o), repr(e)])


def constant_coefficients(spec):
    """``(a, b, c, d, q, r, g, x)`` of a constant-kernel spec; usage error otherwise."""
    bad = [name for name in "ABCD" if not spec.kernel(name).is_constant]
    if bad:
        raise SpecError("SDE reduction needs constant kernels; not constant: "
                        + ", ".join(bad))
    if spec.Q.times is not None or spec.R.times is not None:
        raise SpecError("SDE reduction needs constant weights Q and R")
    if not spec.free_path.is_constant:
        raise SpecError("SDE reduction needs a constant free path")
    ev = {name: spec.kernel(name).evaluate(spec.t0, spec.t0) for name in "ABCD"}
    return (ev["A"], ev["B"], ev["C"], ev["D"], spec.Q.at(spec.t0), spec.R.at(spec.t0),
            spec.G, spec.free_path.values[0])


def compare_with_volterra(sol, curve: SdeRiccatiCurve, x) -> ReductionTable:
    """Per-node value gap between the Volterra kernels and the ODE curve at constant ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != sol.n:
        raise SpecError(f"point has dimension {x.size}, expected {sol.n}")
    nodes = sol.grid.nodes
    rows = []
    for k in range(sol.N + 1):
        i = int(np.argmin(np.abs(curve.times - nodes[k])))
        if abs(curve.times[i] - nodes[k]) > 1e-9:
            raise SpecError(f"ODE curve has no node at s_{k}={nodes[k]}; "
                            "use a step count that is a multiple of N")
        chi = np.tile(x, sol.N - k + 1)
        vol = 0.5 * float(chi @ sol.P[k] @ chi)
        ode = 0.5 * float(x @ curve.Sigma[i] @ x)
        rows.append((k, float(nodes[k]), vol, ode, abs(vol - ode)))
    return ReductionTable(rows)
