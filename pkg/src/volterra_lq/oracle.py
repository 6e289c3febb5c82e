"""Exact ground truth on a binary scenario tree.

Increments are ``xi_k = +-sqrt(h)`` with probability 1/2.  A node at depth
``k`` is an integer in ``[0, 2**k)``; its children are ``2*i`` (down) and
``2*i + 1`` (up), so the descendants of a node form a contiguous block and
conditional expectations are reshapes followed by means.  A process observed
at depth ``k`` is stored as an array of shape ``(2**k, dim)``.

Everything here works directly from the sampled kernels; nothing is taken
from the lifted Riccati system, so agreement between the two is a genuine
cross-check.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg as sla
from scipy import sparse
from scipy.sparse import linalg as spla

from .errors import ConvexityError, SpecError
from .grid import SampledCoefficients

MAX_DEPTH = 12
DENSE_LIMIT = 4096


class ScenarioTree:
    def __init__(self, N: int, h: float):
        if N < 1:
            raise SpecError(f"tree depth must be >= 1, got {N}")
        if N > MAX_DEPTH:
            raise SpecError(f"tree depth {N} exceeds the oracle limit {MAX_DEPTH}")
        self.N = int(N)
        self.h = float(h)
        self.root_h = float(np.sqrt(h))

    def size(self, k):
        return 2 ** k

    def node_count(self):
        return 2 ** (self.N + 1) - 1

    def xi(self, k: int) -> np.ndarray:
        """Increment over step ``k`` as seen from depth ``k + 1``."""
        up = np.arange(2 ** (k + 1)) & 1
        return np.where(up == 1, self.root_h, -self.root_h)

    def lift(self, arr, level, to_level):
        """View a depth-``level`` process at a deeper level."""
        if to_level < level:
            raise SpecError("cannot lift to a shallower level")
        return np.repeat(arr, 2 ** (to_level - level), axis=0)

    def cond_exp(self, arr, level, k):
        """``E[. | F_k]`` of a depth-``level`` process, returned at depth ``k``."""
        if k >= level:
            return self.lift(arr, level, k)
        arr = np.asarray(arr)
        return arr.reshape((2 ** k, 2 ** (level - k)) + arr.shape[1:]).mean(axis=1)

    def mart_coef(self, arr, level, k):
        """``z`` at depth ``k`` with ``E_{k+1}[v] = E_k[v] + z xi_k`` (``k < level``)."""
        if not 0 <= k < level:
            raise SpecError(f"representation step {k} must lie below level {level}")
        v = self.cond_exp(arr, level, k + 1)
        v = v.reshape((2 ** k, 2) + v.shape[1:])
        return (v[:, 1] - v[:, 0]) / (2.0 * self.root_h)

    @staticmethod
    def signs(level, idx) -> str:
        return "".join("+" if (idx >> (level - 1 - b)) & 1 else "-" for b in range(level))

    def leaf_xi(self) -> np.ndarray:
        """``(2**N, N)`` array of the increments along each leaf's path."""
        leaves = np.arange(2 ** self.N)[:, None]
        bits = (leaves >> (self.N - 1 - np.arange(self.N))[None, :]) & 1
        return np.where(bits == 1, self.root_h, -self.root_h)


@dataclass
class AdaptedControl:
    u: List[np.ndarray]  # u[k] has shape (2**k, m)

    def at(self, k, signs: str):
        idx = int("".join("1" if c == "+" else "0" for c in signs) or "0", 2)
        return self.u[k][idx]

    def perturbed(self, k, idx, delta):
        u = [a.copy() for a in self.u]
        u[k][idx] += delta
        return AdaptedControl(u)


def _check_tree(coeffs, tree):
    if tree.N != coeffs.N or abs(tree.h - coeffs.h) > 1e-14 * max(1.0, coeffs.h):
        raise SpecError(f"tree (N={tree.N}, h={tree.h}) does not match coefficients "
                        f"(N={coeffs.N}, h={coeffs.h})")


def _path_blocks(x, coeffs):
    x = np.asarray(getattr(x, "values", x), dtype=float).reshape(-1, coeffs.n)
    if x.shape[0] != coeffs.N + 1:
        raise SpecError(f"free path has {x.shape[0]} blocks, expected {coeffs.N + 1}")
    return x


def forward_state(coeffs: SampledCoefficients, tree: ScenarioTree, x, control: AdaptedControl):
    """Euler scheme of the Volterra state equation on every node: ``X[j]`` at depth ``j``."""
    _check_tree(coeffs, tree)
    x = _path_blocks(x, coeffs)
    N, h = coeffs.N, coeffs.h
    X = []
    for j in range(N + 1):
        X.append(_volterra_sum(coeffs, tree, x, X, control.u, j, j))
    return X


def _volterra_sum(coeffs, tree, x, X, u, j, k):
    """``x_j + sum_{l<k} [...]`` observed at depth ``k`` (the forecast of ``X_j`` at ``s_k``)."""
    h = coeffs.h
    acc = np.tile(x[j], (2 ** k, 1))
    for l in range(min(j, k)):
        Xl = tree.lift(X[l], l, k)
        ul = tree.lift(u[l], l, k)
        xi = tree.lift(tree.xi(l), l + 1, k)[:, None]
        acc = acc + h * (Xl @ coeffs.A[j, l].T + ul @ coeffs.B[j, l].T) \
            + xi * (Xl @ coeffs.C[j, l].T + ul @ coeffs.D[j, l].T)
    return acc


def forecasts(coeffs, tree, x, X, control: AdaptedControl):
    """``chi[k]`` of shape ``(2**k, (N-k+1) n)``: forecasts of ``X_j``, ``j >= k``, at ``s_k``."""
    x = _path_blocks(x, coeffs)
    N = coeffs.N
    return [np.concatenate([_volterra_sum(coeffs, tree, x, X, control.u, j, k)
                            for j in range(k, N + 1)], axis=1) for k in range(N + 1)]


def adapted_cost(coeffs, tree, x, control: AdaptedControl) -> float:
    """Exact expected cost of an adapted control (tree enumeration)."""
    X = forward_state(coeffs, tree, x, control)
    N, h = coeffs.N, coeffs.h
    total = 0.0
    for k in range(N):
        run = np.einsum("pi,ij,pj->p", X[k], coeffs.Q[k], X[k]) \
            + np.einsum("pi,ij,pj->p", control.u[k], coeffs.R[k], control.u[k])
        total += h * run.mean()
    total += np.einsum("pi,ij,pj->p", X[N], coeffs.G, X[N]).mean()
    return 0.5 * float(total)


def feedback_on_tree(sol, lifted, tree, chi0) -> AdaptedControl:
    """Replay the Riccati feedback along every node."""
    chi = np.atleast_2d(np.asarray(getattr(chi0, "values", chi0), dtype=float))
    us = []
    for k in range(tree.N):
        u = chi @ sol.Theta[k].T
        us.append(u)
        chi2 = np.repeat(chi, 2, axis=0)
        u2 = np.repeat(u, 2, axis=0)
        xi = tree.xi(k)[:, None]
        chi = (chi2 @ lifted.F[k].T + u2 @ lifted.Gu[k].T
               + (chi2 @ lifted.H[k].T + u2 @ lifted.L[k].T) * xi)
    return AdaptedControl(us)


# -- adapted quadratic program ---------------------------------------------

@dataclass
class QPSolution:
    control: AdaptedControl
    value: float
    min_hessian_eig: Optional[float]
    variables: int


def _assemble_qp(coeffs, tree, x):
    """Quadratic form ``J(u) = 1/2 u'Hu + f'u + c`` over all node controls."""
    N, n, m, h = coeffs.N, coeffs.n, coeffs.m, coeffs.h
    Lf = 2 ** N
    nloc = N * m
    xi = tree.leaf_xi()
    leaves = np.arange(Lf)
    # c[j]: (L, n) state constant; M[j]: (L, n, nloc) control sensitivity
    c, M = [], []
    for j in range(N + 1):
        cj = np.tile(x[j], (Lf, 1))
        Mj = np.zeros((Lf, n, nloc))
        for l in range(j):
            K = h * coeffs.A[j, l][None] + xi[:, l, None, None] * coeffs.C[j, l][None]
            cj = cj + np.einsum("pij,pj->pi", K, c[l])
            Mj = Mj + np.einsum("pij,pjk->pik", K, M[l])
            Mj[:, :, l * m:(l + 1) * m] += h * coeffs.B[j, l][None] \
                + xi[:, l, None, None] * coeffs.D[j, l][None]
        c.append(cj)
        M.append(Mj)
    Hl = np.zeros((Lf, nloc, nloc))
    fl = np.zeros((Lf, nloc))
    const = np.zeros(Lf)
    for k in range(N):
        QM = np.einsum("ij,pjk->pik", coeffs.Q[k], M[k])
        Hl += h * np.einsum("pik,pil->pkl", M[k], QM)
        Hl[:, k * m:(k + 1) * m, k * m:(k + 1) * m] += h * coeffs.R[k]
        fl += h * np.einsum("pik,pi->pk", QM, c[k])
        const += h * np.einsum("pi,ij,pj->p", c[k], coeffs.Q[k], c[k])
    GM = np.einsum("ij,pjk->pik", coeffs.G, M[N])
    Hl += np.einsum("pik,pil->pkl", M[N], GM)
    fl += np.einsum("pik,pi->pk", GM, c[N])
    const += np.einsum("pi,ij,pj->p", c[N], coeffs.G, c[N])

    offsets = m * (2 ** np.arange(N) - 1)
    anc = leaves[:, None] >> (N - np.arange(N))[None, :]
    gidx = (offsets[None, :] + anc * m)[:, :, None] + np.arange(m)[None, None, :]
    gidx = gidx.reshape(Lf, nloc)
    nvar = m * (2 ** N - 1)
    rows = np.broadcast_to(gidx[:, :, None], Hl.shape).reshape(-1)
    cols = np.broadcast_to(gidx[:, None, :], Hl.shape).reshape(-1)
    H = sparse.coo_matrix((Hl.reshape(-1) / Lf, (rows, cols)), shape=(nvar, nvar)).tocsc()
    f = np.bincount(gidx.reshape(-1), weights=fl.reshape(-1) / Lf, minlength=nvar)
    return H, f, 0.5 * float(const.mean())


def _unpack(vec, N, m):
    out, pos = [], 0
    for k in range(N):
        cnt = 2 ** k * m
        out.append(vec[pos:pos + cnt].reshape(2 ** k, m).copy())
        pos += cnt
    return AdaptedControl(out)


def solve_adapted_qp(coeffs: SampledCoefficients, tree: ScenarioTree, x) -> QPSolution:
    """Minimize the exact tree cost over all adapted controls.

    Stationarity ``H u + f = 0`` is solved as one symmetric system; failure of
    positive definiteness raises :class:`ConvexityError`.
    """
    _check_tree(coeffs, tree)
    x = _path_blocks(x, coeffs)
    H, f, c0 = _assemble_qp(coeffs, tree, x)
    nvar = H.shape[0]
    if nvar <= DENSE_LIMIT:
        Hd = H.toarray()
        Hd = 0.5 * (Hd + Hd.T)
        eigs = np.linalg.eigvalsh(Hd)
        min_eig = float(eigs[0])
        try:
            fac = sla.cho_factor(Hd, lower=True)
        except sla.LinAlgError:
            raise ConvexityError(
                f"adapted cost is not uniformly convex (smallest Hessian eigenvalue "
                f"{min_eig:.6g})") from None
        if min_eig <= 0:
            raise ConvexityError(f"adapted cost is not uniformly convex (smallest Hessian "
                                 f"eigenvalue {min_eig:.6g})")
        u = -sla.cho_solve(fac, f)
        value = 0.5 * float(u @ Hd @ u) + float(f @ u) + c0
    else:
        # symmetric ordering with diagonal pivots: U's diagonal gives the inertia
        lu = spla.splu(H, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
        if not np.array_equal(lu.perm_r, lu.perm_c):
            raise ConvexityError("sparse factorization pivoted off the diagonal; "
                                 "cannot certify convexity")
        piv = lu.U.diagonal()
        min_eig = None
        if np.any(piv <= 0):
            raise ConvexityError("adapted cost is not uniformly convex "
                                 f"(nonpositive pivot {float(piv.min()):.6g})")
        u = -lu.solve(f)
        value = 0.5 * float(u @ (H @ u)) + float(f @ u) + c0
    return QPSolution(control=_unpack(u, coeffs.N, coeffs.m), value=value,
                      min_hessian_eig=min_eig, variables=nvar)


# -- optimality system ------------------------------------------------------

@dataclass
class Type3Solution:
    YA: List[np.ndarray]
    YB: List[np.ndarray]
    YC: List[np.ndarray]
    YD: List[np.ndarray]
    ZA: Dict[Tuple[int, int], np.ndarray]
    ZB: Dict[Tuple[int, int], np.ndarray]
    ZC: Dict[Tuple[int, int], np.ndarray]
    ZD: Dict[Tuple[int, int], np.ndarray]


@dataclass
class BsvieSystem:
    X: List[np.ndarray]
    u: List[np.ndarray]
    eta: List[np.ndarray]
    zeta: List[np.ndarray]
    psi: List[np.ndarray]
    psi0: List[np.ndarray]
    Y: List[np.ndarray]
    Z: Dict[Tuple[int, int], np.ndarray]
    Y0: List[np.ndarray]
    Z0: Dict[Tuple[int, int], np.ndarray]
    Yhat: List[np.ndarray] = field(repr=False, default_factory=list)
    Y0hat: List[np.ndarray] = field(repr=False, default_factory=list)
    type3: Optional[Type3Solution] = None


def solve_optimality_bsvies(coeffs: SampledCoefficients, tree: ScenarioTree, X, u,
                            with_type3: bool = True) -> BsvieSystem:
    """Adjoint processes along a state/control pair, by backward induction.

    ``(eta, zeta)`` represent ``G X_N``; ``Y`` solves the Type-II equation
    ``Y_j = E_j[psi_j + sum_{i>j} h (A_ij' Y_i + C_ij' Z(i,j))]`` with
    ``Z(i,j)`` the representation coefficient of ``Y_i`` at step ``j``; ``Y0``
    solves the Type-I equation with ``B``, ``D`` in place of ``A``, ``C``.
    """
    _check_tree(coeffs, tree)
    u = u.u if isinstance(u, AdaptedControl) else u
    N, h = coeffs.N, coeffs.h
    for arr in list(X) + list(u):
        if not np.all(np.isfinite(arr)):
            raise SpecError("state/control contain non-finite values")
    GXN = X[N] @ coeffs.G.T
    eta = [tree.cond_exp(GXN, N, k) for k in range(N + 1)]
    zeta = [tree.mart_coef(GXN, N, k) for k in range(N)]

    psi, psi0 = [], []
    for j in range(N):
        zj = tree.lift(zeta[j], j, N)
        psi.append(tree.lift(X[j] @ coeffs.Q[j].T, j, N) + GXN @ coeffs.A[N, j]
                   + zj @ coeffs.C[N, j])
        psi0.append(GXN @ coeffs.B[N, j] + zj @ coeffs.D[N, j])

    Y: List[Optional[np.ndarray]] = [None] * N
    Y0: List[Optional[np.ndarray]] = [None] * N
    Yhat: List[Optional[np.ndarray]] = [None] * N
    Y0hat: List[Optional[np.ndarray]] = [None] * N
    Z: Dict[Tuple[int, int], np.ndarray] = {}
    Z0: Dict[Tuple[int, int], np.ndarray] = {}
    for j in range(N - 1, -1, -1):
        acc = psi[j].copy()
        acc0 = psi0[j].copy()
        for i in range(j + 1, N):
            Yi = tree.lift(Y[i], i, N)
            Zij = tree.lift(Z[(i, j)], j, N)
            acc += h * (Yi @ coeffs.A[i, j] + Zij @ coeffs.C[i, j])
            acc0 += h * (Yi @ coeffs.B[i, j] + Zij @ coeffs.D[i, j])
        Yhat[j], Y0hat[j] = acc, acc0
        Y[j] = tree.cond_exp(acc, N, j)
        Y0[j] = tree.cond_exp(acc0, N, j)
        for r in range(j, N):
            Z[(j, r)] = tree.mart_coef(acc, N, r)
            Z0[(j, r)] = tree.mart_coef(acc0, N, r)
        # M-solution part: how Y_j itself was built up over earlier steps
        for r in range(j):
            Z[(j, r)] = tree.mart_coef(Y[j], j, r)
    sysm = BsvieSystem(X=list(X), u=list(u), eta=eta, zeta=zeta, psi=psi, psi0=psi0,
                       Y=Y, Z=Z, Y0=Y0, Z0=Z0, Yhat=Yhat, Y0hat=Y0hat)
    if with_type3:
        sysm.type3 = solve_type3(coeffs, tree, psi)
    return sysm


def solve_type3(coeffs: SampledCoefficients, tree: ScenarioTree, psi) -> Type3Solution:
    """Type-III system driven by ``psi`` (leaf-level arrays, one per step).

    Each ``Y^K_j = E_j sum_{i>j} h K_ij' W_i`` for ``K`` in ``A, B, C, D`` with
    ``W_i = E_i[psi_i] + Y^A_i + Z^C(i, i)``; the diagonal ``Z^C(j, j)`` is the
    representation coefficient of the ``C`` sum at its own starting step.
    """
    _check_tree(coeffs, tree)
    N, h = coeffs.N, coeffs.h
    names = ("A", "B", "C", "D")
    Ys = {k: [None] * N for k in names}
    Zs = {k: {} for k in names}
    W: List[Optional[np.ndarray]] = [None] * N
    for j in range(N - 1, -1, -1):
        for name in names:
            K = coeffs.kernel(name)
            acc = np.zeros((2 ** N, K.shape[-1]))
            for i in range(j + 1, N):
                acc += h * (tree.lift(W[i], i, N) @ K[i, j])
            Ys[name][j] = tree.cond_exp(acc, N, j)
            for r in range(j, N):
                Zs[name][(j, r)] = tree.mart_coef(acc, N, r)
        W[j] = tree.cond_exp(psi[j], N, j) + Ys["A"][j] + Zs["C"][(j, j)]
    return Type3Solution(YA=Ys["A"], YB=Ys["B"], YC=Ys["C"], YD=Ys["D"],
                         ZA=Zs["A"], ZB=Zs["B"], ZC=Zs["C"], ZD=Zs["D"])


# -- residual checks --------------------------------------------------------

@dataclass
class Residual:
    name: str
    value: float
    threshold: Optional[float] = None
    argmax: Optional[str] = None  # "k:signs"

    @property
    def passed(self):
        return self.threshold is None or self.value <= self.threshold

    def to_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed, "argmax": self.argmax}


@dataclass
class OracleReport:
    residuals: List[Residual] = field(default_factory=list)

    def __getitem__(self, name) -> Residual:
        for r in self.residuals:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def passed(self):
        return all(r.passed for r in self.residuals)

    def to_dict(self):
        return {"passed": self.passed, "residuals": [r.to_dict() for r in self.residuals]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def _max_over_levels(arrays):
    """Largest entry over per-step node arrays, with its ``step:signs`` location."""
    best, where = 0.0, None
    for k, arr in arrays:
        a = np.abs(np.asarray(arr)).reshape(arr.shape[0], -1).max(axis=1)
        i = int(np.argmax(a))
        if where is None or a[i] > best:
            best, where = float(a[i]), f"{k}:{ScenarioTree.signs(k, i)}"
    return best, where


def stationarity_residuals(sysm: BsvieSystem, coeffs, tree, u=None):
    """Per-step node residuals of both forms of the stationarity condition."""
    u = sysm.u if u is None else (u.u if isinstance(u, AdaptedControl) else u)
    t3 = sysm.type3 if sysm.type3 is not None else solve_type3(coeffs, tree, sysm.psi)
    mp, rw = [], []
    for j in range(coeffs.N):
        Ru = u[j] @ coeffs.R[j].T
        mp.append(Ru + sysm.Y0[j])
        rw.append(Ru + tree.cond_exp(sysm.psi0[j], coeffs.N, j) + t3.YB[j] + t3.ZD[(j, j)])
    return mp, rw


def check_stationarity(sysm: BsvieSystem, coeffs, tree, u=None, tol: float = 1e-8,
                       agree_tol: float = 1e-12) -> OracleReport:
    """``R u + Y0 = 0`` and its Type-III form, plus the Type-II/III representation."""
    u = sysm.u if u is None else (u.u if isinstance(u, AdaptedControl) else u)
    t3 = sysm.type3 if sysm.type3 is not None else solve_type3(coeffs, tree, sysm.psi)
    mp, rw = stationarity_residuals(sysm, coeffs, tree, u)
    scale = 1.0 + max(float(np.abs(a).max()) for a in u)
    v, w = _max_over_levels(enumerate(mp))
    report = OracleReport()
    report.residuals.append(Residual("mp_stationarity", v, tol * scale, w))
    v, w = _max_over_levels(enumerate(rw))
    report.residuals.append(Residual("type3_stationarity", v, tol * scale, w))
    v, w = _max_over_levels((j, a - b) for j, (a, b) in enumerate(zip(mp, rw)))
    report.residuals.append(Residual("stationarity_forms_agree", v, agree_tol, w))
    N = coeffs.N
    rep = [(j, sysm.Y[j] - (tree.cond_exp(sysm.psi[j], N, j) + t3.YA[j] + t3.ZC[(j, j)]))
           for j in range(N)]
    v, w = _max_over_levels(rep)
    report.residuals.append(Residual("type2_type3_representation", v, agree_tol, w))
    rep0 = [(j, sysm.Y0[j] - (tree.cond_exp(sysm.psi0[j], N, j) + t3.YB[j] + t3.ZD[(j, j)]))
            for j in range(N)]
    v, w = _max_over_levels(rep0)
    report.residuals.append(Residual("type1_type3_representation", v, agree_tol, w))
    return report


def m_solution_residual(sysm: BsvieSystem, tree) -> float:
    """``max |Y_i - E_l[Y_i] - sum_{l<=r<i} Z(i,r) xi_r|`` over all ``l <= i``."""
    worst = 0.0
    N = len(sysm.Y)
    for i in range(N):
        for l in range(i + 1):
            rebuilt = tree.lift(tree.cond_exp(sysm.Y[i], i, l), l, i)
            for r in range(l, i):
                xi = tree.lift(tree.xi(r), r + 1, i)[:, None]
                rebuilt = rebuilt + tree.lift(sysm.Z[(i, r)], r, i) * xi
            worst = max(worst, float(np.abs(sysm.Y[i] - rebuilt).max()))
    return worst


def equation_residual(sysm: BsvieSystem, tree) -> float:
    """``max |Yhat_j - Y_j - sum_{r>=j} Z(j,r) xi_r|`` at the leaves (and the same for Y0)."""
    worst = 0.0
    N = tree.N
    for hat, Ys, Zs in ((sysm.Yhat, sysm.Y, sysm.Z), (sysm.Y0hat, sysm.Y0, sysm.Z0)):
        for j in range(N):
            rebuilt = tree.lift(Ys[j], j, N)
            for r in range(j, N):
                xi = tree.lift(tree.xi(r), r + 1, N)[:, None]
                rebuilt = rebuilt + tree.lift(Zs[(j, r)], r, N) * xi
            worst = max(worst, float(np.abs(hat[j] - rebuilt).max()))
    return worst


def check_dual_representation(sysm: BsvieSystem, sol, tree, chi_bar, coeffs=None,
                              tol: float = 1e-8) -> OracleReport:
    """Pair the adjoint with unit test paths and compare against ``P_k chi_k``.

    For each step ``k`` and node, the ``(j, c)`` component of
    ``sum_{j<N} h E_k[Y_j] + E_k[G X_N]`` (interior blocks weighted by ``h``,
    terminal block unweighted) must equal the matching entry of ``P_k chi_k``.
    """
    N, h = tree.N, tree.h
    n = sol.n
    GXN = sysm.X[N] @ (sol.P[N]).T if coeffs is None else sysm.X[N] @ coeffs.G.T
    diffs = []
    for k in range(N + 1):
        blocks = [h * tree.cond_exp(sysm.Y[j], j, k) for j in range(k, N)]
        blocks.append(tree.cond_exp(GXN, N, k))
        lhs = np.concatenate(blocks, axis=1)
        rhs = chi_bar[k] @ sol.P[k].T
        if lhs.shape != rhs.shape or lhs.shape[1] != (N - k + 1) * n:
            raise SpecError(f"step {k}: pairing shapes {lhs.shape} vs {rhs.shape}")
        diffs.append((k, lhs - rhs))
    v, w = _max_over_levels(diffs)
    return OracleReport([Residual("dual_representation", v, tol, w)])
