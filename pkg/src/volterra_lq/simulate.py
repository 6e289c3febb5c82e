"""Monte Carlo propagation of the forecast vector under feedback or supplied controls.

Variates come from one Philox stream per path keyed by ``(seed, path)``;
step ``k`` of path ``p`` always reads the ``k``-th draw of that stream, so
results do not depend on chunking or thread scheduling.  Paths are processed
in fixed-size chunks and per-path costs are reduced in path order.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SimulationError, SpecError
from .grid import discretize_path, sample_spec
from .riccati import LiftedSystem, build_lifted

CHUNK = 4096
MAX_EXHAUSTIVE_STEPS = 20


@dataclass(frozen=True)
class NoiseDriver:
    kind: str = "gaussian"
    seed: int = 0
    exhaustive: bool = False

    def __post_init__(self):
        if self.kind not in ("gaussian", "two-point"):
            raise SpecError(f"unknown driver kind {self.kind!r}")
        if self.exhaustive and self.kind != "two-point":
            raise SpecError("exhaustive enumeration needs the two-point driver")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SpecError("seed must fit in 64 unsigned bits")

    def path_count(self, N, paths):
        if self.exhaustive:
            if N > MAX_EXHAUSTIVE_STEPS:
                raise SpecError(f"exhaustive mode limited to N <= {MAX_EXHAUSTIVE_STEPS}")
            return 2 ** N
        if paths is None or int(paths) < 1:
            raise SpecError(f"need at least one path, got {paths}")
        return int(paths)

    def variates(self, h: float, N: int, start: int, stop: int) -> np.ndarray:
        """Increments for paths ``start..stop-1``, shape ``(stop - start, N)``."""
        root = np.sqrt(h)
        if self.exhaustive:
            idx = np.arange(start, stop)[:, None]
            bits = (idx >> (N - 1 - np.arange(N))[None, :]) & 1
            return np.where(bits == 1, root, -root)
        out = np.empty((stop - start, N))
        for row, p in enumerate(range(start, stop)):
            gen = np.random.Generator(np.random.Philox(key=(p << 64) | int(self.seed)))
            if self.kind == "gaussian":
                out[row] = root * gen.standard_normal(N)
            else:
                out[row] = np.where(gen.integers(0, 2, size=N) == 1, root, -root)
        return out


@dataclass
class SimReport:
    paths: int
    cost_mean: float
    cost_stderr: float
    control_rms: list
    terminal_second_moment: float
    costs: Optional[np.ndarray] = field(default=None, repr=False)
    controls: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {"paths": self.paths, "cost_mean": self.cost_mean,
                "cost_stderr": self.cost_stderr, "control_rms": list(self.control_rms),
                "terminal_second_moment": self.terminal_second_moment}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def write_costs_csv(self, path):
        if self.costs is None:
            raise SpecError("report was produced without per-path costs")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "cost"])
            for p, c in enumerate(self.costs):
                w.writerow([p, repr(float(c))])


def propagate_aux(chi, u, xi, lifted: LiftedSystem, k: int) -> np.ndarray:
    """One step of the forecast dynamics; rows of ``chi``/``u`` are independent paths."""
    chi = np.asarray(chi, dtype=float)
    u = np.asarray(u, dtype=float)
    single = chi.ndim == 1
    chi2 = np.atleast_2d(chi)
    u2 = np.atleast_2d(u)
    if chi2.shape[1] != lifted.dim(k) or u2.shape[1] != lifted.m:
        raise SpecError(f"step {k}: forecast length {chi2.shape[1]} / control length "
                        f"{u2.shape[1]}, expected {lifted.dim(k)} / {lifted.m}")
    xi2 = np.reshape(np.asarray(xi, dtype=float), (-1, 1))
    nxt = (chi2 @ lifted.F[k].T + u2 @ lifted.Gu[k].T
           + (chi2 @ lifted.H[k].T + u2 @ lifted.L[k].T) * xi2)
    return nxt[0] if single else nxt


def _prepare(spec, grid, lifted, coeffs):
    if coeffs is None:
        coeffs = sample_spec(spec, grid)
    if lifted is None:
        lifted = build_lifted(coeffs, grid)
    chi0 = discretize_path(spec.free_path, grid, 0).values
    return lifted, coeffs, chi0


def _run_chunk(lifted, coeffs, chi0, xi, theta, controls, record):
    N, n, h = lifted.N, lifted.n, lifted.h
    rows = xi.shape[0]
    chi = np.tile(chi0, (rows, 1))
    cost = np.zeros(rows)
    usq = np.zeros(N)
    rec = np.empty((rows, N, lifted.m)) if record else None
    for k in range(N):
        X = chi[:, :n]
        u = chi @ theta[k].T if controls is None else controls[:, k, :]
        if record:
            rec[:, k, :] = u
        cost += h * (np.einsum("pi,ij,pj->p", X, coeffs.Q[k], X)
                     + np.einsum("pi,ij,pj->p", u, coeffs.R[k], u))
        usq[k] = np.sum(u * u)
        with np.errstate(invalid="ignore", over="ignore"):
            chi = propagate_aux(chi, u, xi[:, k], lifted, k)
        bad = ~np.all(np.isfinite(chi), axis=1)
        if np.any(bad):
            return None, (int(np.argmax(bad)), k)
    cost += np.einsum("pi,ij,pj->p", chi, coeffs.G, chi)
    return (0.5 * cost, usq, np.sum(chi * chi), rec), None


def _simulate(spec, grid, driver, paths, theta, controls, threads, lifted, coeffs,
              record, keep_costs):
    lifted, coeffs, chi0 = _prepare(spec, grid, lifted, coeffs)
    N = lifted.N
    total = driver.path_count(N, paths)
    if controls is not None:
        controls = np.asarray(controls, dtype=float)
        if controls.shape != (total, N, lifted.m):
            raise SpecError(f"controls must have shape {(total, N, lifted.m)}, "
                            f"got {controls.shape}")
    bounds = [(s, min(s + CHUNK, total)) for s in range(0, total, CHUNK)]

    def work(bnd):
        s, e = bnd
        xi = driver.variates(lifted.h, N, s, e)
        sub = None if controls is None else controls[s:e]
        res, fail = _run_chunk(lifted, coeffs, chi0, xi, theta, sub, record)
        if fail is not None:
            raise SimulationError(f"non-finite forecast on path {s + fail[0]} at step {fail[1]}",
                                  path=s + fail[0], step=fail[1])
        return res

    if threads and threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bounds))
    else:
        results = [work(b) for b in bounds]

    costs = np.concatenate([r[0] for r in results])
    usq = np.sum([r[1] for r in results], axis=0)
    term = float(np.sum([r[2] for r in results])) / total
    stderr = float(np.std(costs, ddof=1) / np.sqrt(total)) if total > 1 else 0.0
    return SimReport(
        paths=total, cost_mean=float(np.mean(costs)), cost_stderr=stderr,
        control_rms=[float(v) for v in np.sqrt(usq / total)],
        terminal_second_moment=term,
        costs=costs if keep_costs else None,
        controls=np.concatenate([r[3] for r in results]) if record else None)


def _theta_list(policy):
    return list(policy.Theta) if hasattr(policy, "Theta") else [np.asarray(t) for t in policy]


def simulate_closed_loop(spec, grid, policy, driver: NoiseDriver, paths=None, *, threads=1,
                         lifted=None, coeffs=None, record_controls=False,
                         keep_costs=False) -> SimReport:
    """Run ``u_k = Theta_k chi_k`` along independent paths and estimate the cost.

    ``policy`` is a :class:`~volterra_lq.riccati.RiccatiSolution` or a list of
    feedback matrices.  With an exhaustive driver every sign sequence is one path.
    """
    theta = _theta_list(policy)
    if len(theta) != grid.N:
        raise SpecError(f"policy has {len(theta)} steps, grid has {grid.N}")
    for k, t in enumerate(theta):
        if t.shape != (spec.m, (grid.N - k + 1) * spec.n):
            raise SpecError(f"Theta[{k}] has shape {t.shape}")
    return _simulate(spec, grid, driver, paths, theta, None, threads, lifted, coeffs,
                     record_controls, keep_costs)


def simulate_open_loop(spec, grid, controls, driver: NoiseDriver, *, threads=1, lifted=None,
                       coeffs=None, keep_costs=False) -> SimReport:
    """Same cost estimate with controls given per path and step, shape ``(paths, N, m)``."""
    controls = np.asarray(controls, dtype=float)
    if controls.ndim != 3:
        raise SpecError(f"controls must be 3-D (paths, N, m), got shape {controls.shape}")
    return _simulate(spec, grid, driver, controls.shape[0], None, controls, threads, lifted,
                     coeffs, False, keep_costs)
