import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_lq.errors import SpecError
from volterra_lq.grid import build_grid, discretize_path, sample_spec
from volterra_lq.model import FreePath, KernelSpec, constant_problem, eval_kernel

from conftest import make_instance


@pytest.mark.parametrize("t0,T,N,nodes,h", [
    (0.0, 1.0, 4, [0, 0.25, 0.5, 0.75, 1], 0.25),
    (0.0, 1.0, 1, [0, 1], 1.0),
    (0.5, 2.0, 3, [0.5, 1.0, 1.5, 2.0], 0.5),
])
def test_build_grid_examples(t0, T, N, nodes, h):
    g = build_grid(t0, T, N)
    np.testing.assert_allclose(g.nodes, nodes, atol=1e-15)
    assert g.h == pytest.approx(h)


@pytest.mark.parametrize("args", [(0.0, 1.0, 0), (1.0, 1.0, 3), (2.0, 1.0, 3)])
def test_build_grid_rejects_bad_arguments(args):
    with pytest.raises(SpecError):
        build_grid(*args)


@settings(max_examples=50, deadline=None)
@given(t0=st.floats(-5, 5), span=st.floats(1e-3, 10), N=st.integers(1, 500))
def test_last_node_is_pinned(t0, span, N):
    g = build_grid(t0, t0 + span, N)
    assert g.nodes[-1] == t0 + span
    assert np.all(np.diff(g.nodes) > 0)


def test_sample_constant_and_separable():
    spec = constant_problem(0.7, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0)
    c = sample_spec(spec, build_grid(0.0, 1.0, 3))
    for j in range(4):
        for k in range(j + 1):
            assert c.A[j, k, 0, 0] == 0.7
    # A(s, tau) = s * tau
    sep = spec.__class__(**{**spec.__dict__, "A": KernelSpec.separable([(1.0, [0, 1], [0, 1])])})
    c = sample_spec(sep, build_grid(0.0, 1.0, 2))
    assert c.A[1, 0, 0, 0] == 0.0
    assert c.A[2, 0, 0, 0] == 0.0
    assert c.A[2, 1, 0, 0] == pytest.approx(0.5)


def test_sampled_exponential_matches_eval_kernel():
    spec = constant_problem(0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0)
    spec = spec.__class__(**{**spec.__dict__, "C": KernelSpec.exponential([(1.5, 0.8)])})
    grid = build_grid(0.0, 1.0, 5)
    c = sample_spec(spec, grid)
    for j in range(6):
        for k in range(j + 1):
            np.testing.assert_array_equal(c.C[j, k],
                                          eval_kernel(spec, "C", grid.nodes[j], grid.nodes[k]))


def test_weights_are_symmetrized():
    inst = make_instance(3, n=2, m=2, N=3)
    for Q in inst.coeffs.Q:
        assert np.array_equal(Q, Q.T)
    assert np.array_equal(inst.coeffs.G, inst.coeffs.G.T)


def test_discretize_path_examples():
    grid = build_grid(0.0, 1.0, 2)
    np.testing.assert_array_equal(discretize_path(FreePath.constant(3.0), grid).values,
                                  [3.0, 3.0, 3.0])
    lin = FreePath([0.0, 1.0], [[0.0], [1.0]])
    np.testing.assert_allclose(discretize_path(lin, grid).values, [0.0, 0.5, 1.0])
    term = discretize_path(lin, grid, 2)
    assert term.start == 2 and term.values.tolist() == [1.0]


def test_discretize_path_restriction_drops_first_block():
    inst = make_instance(5, n=2, N=6)
    fp, grid = inst.spec.free_path, inst.grid
    for k in range(grid.N):
        full = discretize_path(fp, grid, k)
        nxt = discretize_path(fp, grid, k + 1)
        np.testing.assert_array_equal(full.restrict().values, nxt.values)
        assert nxt.sup_norm() <= full.sup_norm()


def test_coefficient_restriction_matches_subgrid_sampling():
    inst = make_instance(8, n=1, N=5)
    k = 2
    sub = inst.coeffs.restrict(k)
    assert sub.N == 3
    np.testing.assert_array_equal(sub.A, inst.coeffs.A[k:, k:])
    np.testing.assert_array_equal(sub.R, inst.coeffs.R[k:])
