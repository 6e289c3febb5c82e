"""Problem instances for linear-quadratic control of forward stochastic Volterra equations.

A problem is the controlled state equation

    X(s) = x(s) + int_t^s [A(s,r) X(r) + B(s,r) u(r)] dr
                + int_t^s [C(s,r) X(r) + D(s,r) u(r)] dW(r)

together with the cost ``1/2 E[ int (X'QX + u'Ru) ds + X(T)'G X(T) ]``.
Kernels live on the lower triangle ``t0 <= tau <= s <= T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, H4ViolationError, SpecError

KERNEL_KINDS = ("constant", "separable", "exponential", "fractional", "tabulated")
KERNEL_NAMES = ("A", "B", "C", "D")

# slack on the triangle test so grid nodes computed as t0 + k*h never fall out
_DOMAIN_SLACK = 1e-12


def as_matrix(value, shape=None, name="matrix"):
    """Coerce scalars / nested lists to a float 2-D array, optionally checking shape."""
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise SpecError(f"{name}: expected a matrix, got array of ndim {arr.ndim}")
    if shape is not None and arr.shape != tuple(shape):
        raise SpecError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A two-time coefficient kernel of one of five closed forms.

    Use the constructors :meth:`constant`, :meth:`separable`, :meth:`exponential`,
    :meth:`fractional` and :meth:`tabulated` rather than building this directly.
    """

    kind: str
    shape: tuple
    terms: tuple = ()
    alpha: float = 1.0
    scale: float = 1.0
    h_min: Optional[float] = None
    times: Optional[np.ndarray] = None
    table: Optional[np.ndarray] = None
    _interp: object = field(default=None, repr=False, compare=False)

    # -- constructors -------------------------------------------------------
    @classmethod
    def constant(cls, value):
        mat = as_matrix(value, name="constant kernel")
        return cls("constant", mat.shape, terms=(mat,))

    @classmethod
    def separable(cls, terms):
        """``sum_i M_i f_i(s) g_i(tau)``; ``terms`` holds ``(M_i, f_coeffs, g_coeffs)``.

        Polynomial coefficients are in ascending powers.
        """
        parsed = []
        for mat, f, g in terms:
            parsed.append((as_matrix(mat, name="separable factor"),
                           np.asarray(f, dtype=float), np.asarray(g, dtype=float)))
        if not parsed:
            raise SpecError("separable kernel needs at least one term")
        _same_shapes([p[0] for p in parsed], "separable kernel")
        return cls("separable", parsed[0][0].shape, terms=tuple(parsed))

    @classmethod
    def exponential(cls, terms):
        """``sum_i M_i exp(-lam_i (s - tau))``; ``terms`` holds ``(M_i, lam_i)``."""
        parsed = [(as_matrix(mat, name="exponential factor"), float(lam)) for mat, lam in terms]
        if not parsed:
            raise SpecError("exponential kernel needs at least one term")
        _same_shapes([p[0] for p in parsed], "exponential kernel")
        return cls("exponential", parsed[0][0].shape, terms=tuple(parsed))

    @classmethod
    def fractional(cls, alpha, scale=1.0, matrix=1.0, h_min=None):
        """``scale * M * (s - tau)^(alpha - 1)``, lag clamped below at ``h_min``."""
        mat = as_matrix(matrix, name="fractional factor")
        if alpha <= 0:
            raise SpecError(f"fractional exponent must be positive, got {alpha}")
        return cls("fractional", mat.shape, terms=(mat,), alpha=float(alpha),
                   scale=float(scale), h_min=None if h_min is None else float(h_min))

    @classmethod
    def tabulated(cls, times, values):
        """Bilinear interpolation of ``values[i, j] = K(times[i], times[j])``."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise SpecError("tabulated kernel needs at least two strictly increasing times")
        if values.ndim == 2:
            values = values[:, :, None, None]
        if values.ndim != 4 or values.shape[:2] != (times.size, times.size):
            raise SpecError(
                f"tabulated kernel values must have shape (T, T, rows, cols) with T={times.size}, "
                f"got {values.shape}")
        interp = RegularGridInterpolator((times, times), values, method="linear",
                                         bounds_error=True)
        return cls("tabulated", values.shape[2:], times=times, table=values, _interp=interp)

    # -- behaviour ----------------------------------------------------------
    @property
    def nonconforming(self) -> bool:
        return self.kind == "fractional"

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    @property
    def is_convolution(self) -> bool:
        return self.kind in ("constant", "exponential", "fractional")

    def evaluate(self, s, tau, h_min=None):
        s = float(s)
        tau = float(tau)
        if self.kind == "constant":
            return self.terms[0].copy()
        if self.kind == "separable":
            out = np.zeros(self.shape)
            for mat, f, g in self.terms:
                out += mat * (npoly.polyval(s, f) * npoly.polyval(tau, g))
            return out
        if self.kind == "exponential":
            lag = s - tau
            out = np.zeros(self.shape)
            for mat, lam in self.terms:
                out += mat * np.exp(-lam * lag)
            return out
        if self.kind == "fractional":
            lag = s - tau
            floor = h_min if h_min is not None else self.h_min
            if floor is not None:
                lag = max(lag, floor)
            if lag <= 0.0 and self.alpha < 1.0:
                raise DomainError(
                    "fractional kernel is singular on the diagonal; supply h_min")
            return self.terms[0] * (self.scale * lag ** (self.alpha - 1.0))
        if self.kind == "tabulated":
            try:
                val = self._interp([[s, tau]])[0]
            except ValueError as exc:
                raise DomainError(
                    f"({s}, {tau}) outside tabulated kernel range "
                    f"[{self.times[0]}, {self.times[-1]}]") from exc
            return np.array(val, dtype=float).reshape(self.shape)
        raise SpecError(f"unknown kernel kind {self.kind!r}")

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "value": self.terms[0].tolist()}
        if self.kind == "separable":
            return {"kind": "separable",
                    "terms": [{"matrix": m.tolist(), "f": f.tolist(), "g": g.tolist()}
                              for m, f, g in self.terms]}
        if self.kind == "exponential":
            return {"kind": "exponential",
                    "terms": [{"matrix": m.tolist(), "rate": lam} for m, lam in self.terms]}
        if self.kind == "fractional":
            out = {"kind": "fractional", "alpha": self.alpha, "scale": self.scale,
                   "matrix": self.terms[0].tolist()}
            if self.h_min is not None:
                out["h_min"] = self.h_min
            return out
        return {"kind": "tabulated", "times": self.times.tolist(), "values": self.table.tolist()}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            # bare number or matrix: constant kernel shorthand
            return cls.constant(data)
        kind = data.get("kind")
        if kind == "constant":
            return cls.constant(data["value"])
        if kind == "separable":
            return cls.separable([(t.get("matrix", 1.0), t["f"], t["g"]) for t in data["terms"]])
        if kind == "exponential":
            return cls.exponential([(t.get("matrix", 1.0), t["rate"]) for t in data["terms"]])
        if kind == "fractional":
            return cls.fractional(data["alpha"], data.get("scale", 1.0),
                                  data.get("matrix", 1.0), data.get("h_min"))
        if kind == "tabulated":
            return cls.tabulated(data["times"], data["values"])
        raise SpecError(f"unknown kernel kind {kind!r}; expected one of {KERNEL_KINDS}")


def _same_shapes(mats, name):
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise SpecError(f"{name}: inconsistent term shapes {sorted(shapes)}")


@dataclass(frozen=True, eq=False)
class TimeWeight:
    """A symmetric weight that is constant or piecewise linear in time."""

    value: np.ndarray
    times: Optional[np.ndarray] = None

    @classmethod
    def constant(cls, value):
        return cls(as_matrix(value, name="weight"))

    @classmethod
    def tabulated(cls, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        if times.ndim != 1 or values.shape[0] != times.size or np.any(np.diff(times) <= 0):
            raise SpecError("tabulated weight needs strictly increasing times matching values")
        return cls(values, times)

    @property
    def shape(self):
        return self.value.shape[-2:]

    def at(self, s):
        if self.times is None:
            return self.value.copy()
        rows, cols = self.shape
        flat = self.value.reshape(self.times.size, -1)
        out = np.array([np.interp(s, self.times, flat[:, i]) for i in range(rows * cols)])
        return out.reshape(rows, cols)

    def sample_times(self):
        return () if self.times is None else tuple(self.times)

    def to_dict(self):
        if self.times is None:
            return {"kind": "constant", "value": self.value.tolist()}
        return {"kind": "tabulated", "times": self.times.tolist(), "values": self.value.tolist()}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            return cls.constant(data)
        if data.get("kind", "constant") == "constant":
            return cls.constant(data["value"])
        if data["kind"] == "tabulated":
            return cls.tabulated(data["times"], data["values"])
        raise SpecError(f"unknown weight kind {data['kind']!r}")


@dataclass(frozen=True, eq=False)
class FreePath:
    """User samples of the free path, linearly interpolated (flat beyond the ends)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.asarray(self.values, dtype=float)
        if times.size == 0:
            raise SpecError("free path needs at least one sample")
        if values.ndim == 1:
            values = values[:, None] if values.size == times.size else values[None, :]
        if values.shape[0] != times.size:
            raise SpecError(f"free path: {times.size} times but {values.shape[0]} values")
        if np.any(np.diff(times) <= 0):
            raise SpecError("free path times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value):
        return cls([0.0], [np.atleast_1d(np.asarray(value, dtype=float))])

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def is_constant(self):
        return bool(np.all(self.values == self.values[0]))

    def at(self, s):
        s = np.asarray(s, dtype=float)
        cols = [np.interp(s, self.times, self.values[:, i]) for i in range(self.dim)]
        return np.stack(cols, axis=-1)

    def to_dict(self):
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            return cls.constant(data)
        return cls(data["times"], data["values"])


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    n: int
    m: int
    t0: float
    T: float
    A: KernelSpec
    B: KernelSpec
    C: KernelSpec
    D: KernelSpec
    Q: TimeWeight
    R: TimeWeight
    G: np.ndarray
    free_path: FreePath

    def __post_init__(self):
        object.__setattr__(self, "G", as_matrix(self.G, name="G"))
        if self.n < 1 or self.m < 1:
            raise SpecError(f"dimensions must be positive, got n={self.n}, m={self.m}")
        if not self.t0 < self.T:
            raise SpecError(f"need t0 < T, got t0={self.t0}, T={self.T}")
        n, m = self.n, self.m
        expected = {"A": (n, n), "B": (n, m), "C": (n, n), "D": (n, m)}
        for name, shape in expected.items():
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise SpecError(f"kernel {name}: expected shape {shape}, got {got}")
        for name, shape in (("Q", (n, n)), ("R", (m, m))):
            got = tuple(getattr(self, name).shape)
            if got != shape:
                raise SpecError(f"weight {name}: expected shape {shape}, got {got}")
        if self.G.shape != (n, n):
            raise SpecError(f"G: expected shape {(n, n)}, got {self.G.shape}")
        if self.free_path.dim != n:
            raise SpecError(f"free path has dimension {self.free_path.dim}, expected {n}")

    def kernel(self, which) -> KernelSpec:
        if which not in KERNEL_NAMES:
            raise SpecError(f"unknown kernel {which!r}; expected one of {KERNEL_NAMES}")
        return getattr(self, which)

    def to_dict(self):
        out = {"n": self.n, "m": self.m, "t0": self.t0, "T": self.T}
        for name in KERNEL_NAMES:
            out[name] = self.kernel(name).to_dict()
        out["Q"] = self.Q.to_dict()
        out["R"] = self.R.to_dict()
        out["G"] = self.G.tolist()
        out["free_path"] = self.free_path.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        try:
            n, m = int(data["n"]), int(data["m"])
            kernels = {name: KernelSpec.from_dict(data.get(name, np.zeros((n, n if name in "AC" else m))))
                       for name in KERNEL_NAMES}
            return cls(n=n, m=m, t0=float(data.get("t0", 0.0)), T=float(data["T"]),
                       Q=TimeWeight.from_dict(data.get("Q", np.zeros((n, n)))),
                       R=TimeWeight.from_dict(data["R"]),
                       G=data.get("G", np.zeros((n, n))),
                       free_path=FreePath.from_dict(data["free_path"]),
                       **kernels)
        except KeyError as exc:
            raise SpecError(f"problem is missing field {exc.args[0]!r}") from exc


def eval_kernel(spec: ProblemSpec, which: str, s: float, tau: float, h_min=None) -> np.ndarray:
    """Evaluate kernel ``which`` at ``(s, tau)`` on the lower triangle."""
    lo, hi = spec.t0 - _DOMAIN_SLACK, spec.T + _DOMAIN_SLACK
    if not (lo <= tau <= s + _DOMAIN_SLACK and s <= hi):
        raise DomainError(
            f"({s}, {tau}) outside the lower triangle t0={spec.t0} <= tau <= s <= T={spec.T}")
    return spec.kernel(which).evaluate(s, tau, h_min=h_min)


@dataclass
class Violation:
    check: str
    time: Optional[float]
    margin: float
    message: str


@dataclass
class ValidationReport:
    mode: str
    times: tuple
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    min_R_eig: float = float("nan")
    min_Q_eig: float = float("nan")
    min_G_eig: float = float("nan")

    @property
    def ok(self):
        return not self.violations

    @property
    def margin(self):
        """Smallest eigenvalue of R over the sampled times."""
        return self.min_R_eig

    def to_dict(self):
        return {"mode": self.mode, "ok": self.ok, "min_R_eig": self.min_R_eig,
                "min_Q_eig": self.min_Q_eig, "min_G_eig": self.min_G_eig,
                "violations": [vars(v) for v in self.violations],
                "warnings": list(self.warnings)}


def _check_times(spec, grid):
    if grid is not None:
        return tuple(float(t) for t in grid.nodes)
    pts = {float(spec.t0), float(spec.T)}
    for w in (spec.Q, spec.R):
        pts.update(t for t in w.sample_times() if spec.t0 <= t <= spec.T)
    return tuple(sorted(pts))


def validate_spec(spec: ProblemSpec, mode: str = "strict-H4", grid=None,
                  lam: float = 0.0, eps: float = 1e-10,
                  raise_on_violation: bool = True) -> ValidationReport:
    """Check domains and, in ``strict-H4`` mode, positivity of Q, R and G.

    ``R(s) >= lam I`` must hold strictly (``min eig > lam``); Q and G may dip to
    ``-eps``.  Shape problems were already rejected when the spec was built.
    """
    if mode not in ("strict-H4", "convex-only"):
        raise SpecError(f"unknown validation mode {mode!r}")
    times = _check_times(spec, grid)
    report = ValidationReport(mode=mode, times=times)

    for name in KERNEL_NAMES:
        kern = spec.kernel(name)
        if kern.nonconforming:
            detail = "unbounded near diagonal" if kern.alpha < 1 else "not smooth at diagonal"
            report.warnings.append(f"kernel {name} nonconforming with H1 ({detail})")
        if kern.kind == "tabulated" and (kern.times[0] > spec.t0 + _DOMAIN_SLACK
                                         or kern.times[-1] < spec.T - _DOMAIN_SLACK):
            report.violations.append(Violation(
                f"{name}_domain", None, float("nan"),
                f"kernel {name} table [{kern.times[0]}, {kern.times[-1]}] does not cover "
                f"[{spec.t0}, {spec.T}]"))

    if mode == "strict-H4":
        r_eigs = [(s, np.linalg.eigvalsh(_sym(spec.R.at(s)))[0]) for s in times]
        q_eigs = [(s, np.linalg.eigvalsh(_sym(spec.Q.at(s)))[0]) for s in times]
        g_eig = float(np.linalg.eigvalsh(_sym(spec.G))[0])
        report.min_R_eig = float(min(e for _, e in r_eigs))
        report.min_Q_eig = float(min(e for _, e in q_eigs))
        report.min_G_eig = g_eig
        for s, e in r_eigs:
            if not e > lam:
                report.violations.append(Violation(
                    "R_positive", s, float(e - lam),
                    f"R not uniformly positive at s={s:g}, eig={e:g}"))
        for s, e in q_eigs:
            if e < -eps:
                report.violations.append(Violation(
                    "Q_psd", s, float(e), f"Q not positive semidefinite at s={s:g}, eig={e:g}"))
        if g_eig < -eps:
            report.violations.append(Violation(
                "G_psd", None, g_eig, f"G not positive semidefinite, eig={g_eig:g}"))

    if report.violations and raise_on_violation:
        raise H4ViolationError("; ".join(v.message for v in report.violations), report)
    return report


def _sym(mat):
    return 0.5 * (mat + mat.T)


def zero_kernel(rows, cols) -> KernelSpec:
    return KernelSpec.constant(np.zeros((rows, cols)))


def constant_problem(a, b, c, d, q, r, g, x, T=1.0, t0=0.0) -> ProblemSpec:
    """Constant-coefficient instance; scalars are promoted to 1x1 matrices."""
    a, c, q, g = (as_matrix(v) for v in (a, c, q, g))
    b, d, r = (as_matrix(v) for v in (b, d, r))
    n, m = a.shape[0], b.shape[1]
    return ProblemSpec(n=n, m=m, t0=t0, T=T,
                       A=KernelSpec.constant(a), B=KernelSpec.constant(b),
                       C=KernelSpec.constant(c), D=KernelSpec.constant(d),
                       Q=TimeWeight.constant(q), R=TimeWeight.constant(r), G=g,
                       free_path=FreePath.constant(np.broadcast_to(np.atleast_1d(x), (n,))))
