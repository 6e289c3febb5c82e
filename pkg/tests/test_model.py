import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_lq.errors import DomainError, H4ViolationError, SpecError
from volterra_lq.model import (FreePath, KernelSpec, ProblemSpec, TimeWeight, constant_problem,
                               eval_kernel, validate_spec)


def scalar_spec(**kernels):
    base = dict(A=KernelSpec.constant(0.0), B=KernelSpec.constant(0.0),
                C=KernelSpec.constant(0.0), D=KernelSpec.constant(0.0))
    base.update(kernels)
    return ProblemSpec(n=1, m=1, t0=0.0, T=1.0, Q=TimeWeight.constant(0.0),
                       R=TimeWeight.constant(1.0), G=np.eye(1), free_path=FreePath.constant(1.0),
                       **base)


def test_validate_constant_scalar_passes_with_unit_margin():
    rep = validate_spec(constant_problem(0.1, 0.2, 0.3, 0.4, 0.0, 1.0, 1.0, 1.0))
    assert rep.ok
    assert rep.margin == 1.0


def test_validate_negative_R_names_time_and_eigenvalue():
    spec = constant_problem(0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0)
    with pytest.raises(H4ViolationError, match=r"R not uniformly positive at s=0, eig=-1"):
        validate_spec(spec, "strict-H4")
    rep = validate_spec(spec, "strict-H4", raise_on_violation=False)
    assert not rep.ok and rep.violations[0].time == 0.0
    # convex-only skips the weight checks
    assert validate_spec(spec, "convex-only").ok


def test_fractional_kernel_warns_but_passes():
    spec = scalar_spec(A=KernelSpec.fractional(0.7))
    rep = validate_spec(spec)
    assert rep.ok
    assert rep.warnings == ["kernel A nonconforming with H1 (unbounded near diagonal)"]
    assert spec.kernel("A").nonconforming


def test_unknown_mode_rejected():
    with pytest.raises(SpecError):
        validate_spec(scalar_spec(), "lenient")


def test_margin_is_true_minimum_over_samples():
    times = np.linspace(0.0, 1.0, 7)
    vals = np.array([[[1.5 + np.sin(3 * t), 0.2], [0.2, 2.0 - t]] for t in times])
    spec = ProblemSpec(n=1, m=2, t0=0.0, T=1.0, A=KernelSpec.constant(0.0),
                       B=KernelSpec.constant([[0.0, 0.0]]), C=KernelSpec.constant(0.0),
                       D=KernelSpec.constant([[0.0, 0.0]]), Q=TimeWeight.constant(1.0),
                       R=TimeWeight.tabulated(times, vals), G=np.eye(1),
                       free_path=FreePath.constant(1.0))
    rep = validate_spec(spec)
    expected = min(np.linalg.eigvalsh(v)[0] for v in vals)
    assert rep.margin == pytest.approx(expected, abs=1e-15)


def test_shape_mismatch_is_hard_error():
    with pytest.raises(SpecError):
        ProblemSpec(n=2, m=1, t0=0.0, T=1.0, A=KernelSpec.constant(np.eye(2)),
                    B=KernelSpec.constant(np.ones((2, 1))), C=KernelSpec.constant(np.eye(3)),
                    D=KernelSpec.constant(np.ones((2, 1))), Q=TimeWeight.constant(np.eye(2)),
                    R=TimeWeight.constant(1.0), G=np.eye(2), free_path=FreePath.constant([0, 0]))
    with pytest.raises(SpecError):
        ProblemSpec(n=1, m=1, t0=1.0, T=1.0, A=KernelSpec.constant(0), B=KernelSpec.constant(0),
                    C=KernelSpec.constant(0), D=KernelSpec.constant(0),
                    Q=TimeWeight.constant(0), R=TimeWeight.constant(1), G=np.eye(1),
                    free_path=FreePath.constant(0))


def test_eval_kernel_examples():
    assert eval_kernel(scalar_spec(A=KernelSpec.constant(2.5)), "A", 0.8, 0.1)[0, 0] == 2.5
    spec = scalar_spec(A=KernelSpec.exponential([(1.0, 0.0)]))
    assert eval_kernel(spec, "A", 1.0, 0.3)[0, 0] == 1.0
    spec = scalar_spec(A=KernelSpec.exponential([(2.0, 1.0)]))
    ref = float(2 * mpmath.exp(mpmath.mpf(-1)))
    assert eval_kernel(spec, "A", 1.0, 0.0)[0, 0] == pytest.approx(ref, rel=1e-15)


def test_eval_kernel_outside_triangle_is_domain_error():
    spec = scalar_spec()
    for s, tau in ((0.2, 0.5), (1.5, 0.1), (0.5, -0.1)):
        with pytest.raises(DomainError):
            eval_kernel(spec, "A", s, tau)


def test_separable_kernel_is_product_of_polynomials():
    # A(s, tau) = (1 + 2 s) * tau^2
    spec = scalar_spec(A=KernelSpec.separable([(1.0, [1.0, 2.0], [0.0, 0.0, 1.0])]))
    assert eval_kernel(spec, "A", 0.5, 0.25)[0, 0] == pytest.approx(2.0 * 0.0625)


def test_tabulated_kernel_interpolates_bilinearly():
    times = np.array([0.0, 1.0])
    vals = np.zeros((2, 2, 1, 1))
    vals[1, 0] = 4.0
    vals[1, 1] = 2.0
    spec = scalar_spec(C=KernelSpec.tabulated(times, vals))
    assert eval_kernel(spec, "C", 1.0, 0.5)[0, 0] == pytest.approx(3.0)


def test_fractional_kernel_clamps_lag():
    spec = scalar_spec(A=KernelSpec.fractional(0.5, scale=2.0))
    assert eval_kernel(spec, "A", 0.75, 0.5)[0, 0] == pytest.approx(2.0 * 0.25 ** -0.5)
    assert eval_kernel(spec, "A", 0.5, 0.5, h_min=0.25)[0, 0] == pytest.approx(4.0)


def test_eval_kernel_is_bit_deterministic():
    spec = scalar_spec(A=KernelSpec.exponential([(0.7, 1.3), (-0.2, 0.4)]),
                       C=KernelSpec.fractional(0.8))
    for which in "AC":
        a = eval_kernel(spec, which, 0.9, 0.35)
        b = eval_kernel(spec, which, 0.9, 0.35)
        assert a.tobytes() == b.tobytes()


CONVOLUTION = [KernelSpec.constant(1.7), KernelSpec.exponential([(0.5, 2.0), (1.2, 0.3)]),
               KernelSpec.fractional(0.7, 1.5)]


@settings(max_examples=60, deadline=None)
@given(idx=st.integers(0, 2), tau=st.floats(0.0, 0.5), lag=st.floats(1e-3, 0.3),
       delta=st.floats(0.0, 0.2))
def test_convolution_kernels_are_shift_invariant(idx, tau, lag, delta):
    kern = CONVOLUTION[idx]
    assert kern.is_convolution
    a = kern.evaluate(tau + lag, tau)
    b = kern.evaluate(tau + lag + delta, tau + delta)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_kernel_and_spec_roundtrip_through_dict():
    spec = ProblemSpec(n=1, m=1, t0=0.0, T=2.0,
                       A=KernelSpec.exponential([(0.5, 2.0)]),
                       B=KernelSpec.separable([(1.0, [1.0, 1.0], [2.0])]),
                       C=KernelSpec.fractional(0.75, 0.5), D=KernelSpec.constant(0.3),
                       Q=TimeWeight.tabulated([0.0, 2.0], [[[1.0]], [[2.0]]]),
                       R=TimeWeight.constant(1.0), G=np.eye(1),
                       free_path=FreePath([0.0, 1.0, 2.0], [[0.0], [1.0], [0.5]]))
    back = ProblemSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()
    for which in "ABCD":
        np.testing.assert_array_equal(eval_kernel(spec, which, 1.3, 0.4),
                                      eval_kernel(back, which, 1.3, 0.4))


def test_bare_numbers_mean_constants():
    spec = ProblemSpec.from_dict({"n": 1, "m": 1, "T": 1.0, "A": 0.3, "B": 0.5, "C": 0.2,
                                  "D": 0.4, "Q": 1, "R": 1, "G": 1, "free_path": 2.0})
    assert spec.kernel("A").is_constant
    assert spec.free_path.at(0.3)[0] == 2.0


def test_free_path_interpolates_and_is_flat_outside():
    fp = FreePath([0.0, 1.0], [[0.0], [2.0]])
    assert fp.at(0.25)[0] == pytest.approx(0.5)
    assert fp.at(1.5)[0] == 2.0
    with pytest.raises(SpecError):
        FreePath([], np.zeros((0, 1)))
