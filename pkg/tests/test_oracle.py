import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_lq import oracle as orc
from volterra_lq.errors import ConvexityError, SpecError
from volterra_lq.model import constant_problem
from volterra_lq.riccati import value_at

from conftest import Instance, direct_forecasts, make_instance


def optimal_system(inst, control=None):
    if control is None:
        control = orc.feedback_on_tree(inst.sol, inst.lifted, inst.tree, inst.chi0)
    X = orc.forward_state(inst.coeffs, inst.tree, inst.chi0, control)
    return control, X, orc.solve_optimality_bsvies(inst.coeffs, inst.tree, X, control)


# -- tree ---------------------------------------------------------------------

def test_tree_structure():
    tree = orc.ScenarioTree(3, 0.25)
    assert tree.node_count() == 15
    np.testing.assert_array_equal(tree.xi(1), [-0.5, 0.5, -0.5, 0.5])
    assert orc.ScenarioTree.signs(3, 5) == "+-+"
    with pytest.raises(SpecError):
        orc.ScenarioTree(13, 0.1)


def test_conditional_expectation_averages_children(rng):
    tree = orc.ScenarioTree(4, 0.1)
    v = rng.normal(size=(16, 2))
    e = tree.cond_exp(v, 4, 3)
    np.testing.assert_allclose(e, 0.5 * (v[0::2] + v[1::2]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(0, 5), l=st.integers(0, 5))
def test_conditional_expectations_compose(seed, k, l):
    tree = orc.ScenarioTree(5, 0.2)
    v = np.random.default_rng(seed).normal(size=(32, 1))
    lhs = tree.cond_exp(tree.lift(tree.cond_exp(v, 5, l), l, 5), 5, k)
    rhs = tree.cond_exp(v, 5, min(k, l))
    np.testing.assert_allclose(tree.lift(lhs, k, 5), tree.lift(rhs, min(k, l), 5),
                               rtol=1e-13, atol=1e-14)


def test_martingale_coefficient_represents_exactly(rng):
    tree = orc.ScenarioTree(3, 0.09)
    v = rng.normal(size=(8, 1))
    for k in range(3):
        z = tree.mart_coef(v, 3, k)
        rebuilt = tree.lift(tree.cond_exp(v, 3, k), k, k + 1) \
            + tree.lift(z, k, k + 1) * tree.xi(k)[:, None]
        np.testing.assert_allclose(rebuilt, tree.cond_exp(v, 3, k + 1), atol=1e-14)


def test_adapted_control_lookup():
    u = orc.AdaptedControl([np.array([[1.0]]), np.array([[2.0], [3.0]])])
    assert u.at(0, "")[0] == 1.0 and u.at(1, "+")[0] == 3.0
    v = u.perturbed(1, 0, 0.5)
    assert v.u[1][0, 0] == 2.5 and u.u[1][0, 0] == 2.0


def test_forward_state_matches_direct_loop(rng):
    inst = make_instance(71, n=2, m=1, N=3)
    ctl = orc.AdaptedControl([rng.normal(size=(2 ** k, 1)) for k in range(3)])
    X = orc.forward_state(inst.coeffs, inst.tree, inst.chi0, ctl)
    chis = orc.forecasts(inst.coeffs, inst.tree, inst.chi0, X, ctl)
    xi = inst.tree.leaf_xi()
    for leaf in range(8):
        u = np.array([ctl.u[k][leaf >> (3 - k)] for k in range(3)])
        Xd, chid = direct_forecasts(inst.coeffs, inst.chi0.blocks, u, xi[leaf])
        for k in range(4):
            np.testing.assert_allclose(X[k][leaf >> (3 - k)], Xd[k], atol=1e-13)
            np.testing.assert_allclose(chis[k][leaf >> (3 - k)], chid[k], atol=1e-13)


# -- adapted QP -----------------------------------------------------------------

def test_qp_without_control_channels_is_uncontrolled():
    inst = Instance(constant_problem(0.4, 0, 0.3, 0, 1, 1.5, 1, 0.8), 3)
    qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
    assert all(np.abs(u).max() <= 1e-14 for u in qp.control.u)
    zero = orc.AdaptedControl([np.zeros((2 ** k, 1)) for k in range(3)])
    assert qp.value == pytest.approx(orc.adapted_cost(inst.coeffs, inst.tree, inst.chi0, zero))


def test_qp_one_step_closed_form():
    b, d, r, g, x = 0.8, -0.5, 1.2, 1.7, 0.9
    inst = Instance(constant_problem(0, b, 0, d, 0, r, g, x, T=0.5), 1)
    h = inst.grid.h
    qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
    u = -b * g * x / (r + g * b * b * h + g * d * d)
    assert qp.control.u[0][0, 0] == pytest.approx(u, rel=1e-13)
    expect = 0.5 * (r * h * u * u + g * (x + b * h * u) ** 2 + g * d * d * u * u * h)
    assert qp.value == pytest.approx(expect, rel=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_qp_matches_riccati_value(seed):
    inst = make_instance(200 + seed, n=1, m=1, N=3)
    qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
    v = value_at(inst.sol, 0, inst.chi0)
    assert abs(qp.value - v) <= 1e-8 * (1 + abs(v))
    assert qp.value == pytest.approx(orc.adapted_cost(inst.coeffs, inst.tree, inst.chi0,
                                                      qp.control), rel=1e-12)


def test_qp_optimum_beats_sampled_adapted_controls(rng):
    for N in (1, 2, 3):
        inst = make_instance(300 + N, n=2, m=2, N=N)
        qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
        for _ in range(40):
            scale = rng.choice([1e-3, 0.1, 1.0])
            ctl = orc.AdaptedControl([u + scale * rng.normal(size=u.shape)
                                      for u in qp.control.u])
            assert orc.adapted_cost(inst.coeffs, inst.tree, inst.chi0, ctl) >= qp.value
            wild = orc.AdaptedControl([rng.normal(size=u.shape) for u in qp.control.u])
            assert orc.adapted_cost(inst.coeffs, inst.tree, inst.chi0, wild) >= qp.value


def test_qp_rejects_nonconvex_cost():
    inst = Instance(constant_problem(0.1, 0.5, 0.1, 0.2, 1.0, -1.0, 1.0, 1.0), 3)
    with pytest.raises(ConvexityError):
        orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)


def test_sparse_qp_path_matches_riccati():
    inst = make_instance(401, n=1, m=2, N=12)
    qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
    assert qp.variables > orc.DENSE_LIMIT and qp.min_hessian_eig is None
    v = value_at(inst.sol, 0, inst.chi0)
    assert abs(qp.value - v) <= 1e-8 * (1 + abs(v))


# -- optimality system ---------------------------------------------------------------

def test_zero_weights_give_zero_adjoints():
    inst = Instance(constant_problem(0.3, 0.2, 0.1, 0.4, 0.0, 1.0, 0.0, 1.0), 3)
    _, _, sysm = optimal_system(inst)
    for arr in sysm.eta + sysm.zeta + sysm.psi + sysm.psi0 + sysm.Y + sysm.Y0:
        assert not np.any(arr)
    assert not any(np.any(z) for z in list(sysm.Z.values()) + list(sysm.Z0.values()))


def test_drift_free_adjoint_vanishes_without_running_weight():
    inst = Instance(constant_problem(0.0, 0.5, 0.0, 0.3, 0.0, 1.0, 1.0, 1.0), 3)
    _, _, sysm = optimal_system(inst)
    assert all(np.abs(y).max() == 0.0 for y in sysm.Y)


@pytest.mark.parametrize("seed", range(4))
def test_bsvie_identities_hold_node_exactly(seed):
    inst = make_instance(500 + seed, n=2, m=1, N=4)
    _, _, sysm = optimal_system(inst)
    assert orc.m_solution_residual(sysm, inst.tree) <= 1e-12
    assert orc.equation_residual(sysm, inst.tree) <= 1e-12
    rep = orc.check_stationarity(sysm, inst.coeffs, inst.tree)
    assert rep.passed, rep.to_json()


def test_z_fields_are_adapted():
    inst = make_instance(510, n=1, m=1, N=4)
    _, _, sysm = optimal_system(inst)
    for (i, r), z in sysm.Z.items():
        assert z.shape[0] == 2 ** r
    for (i, r), z in sysm.type3.ZC.items():
        assert z.shape[0] == 2 ** r


DEPTH, NODE = 2, 1  # the "-+" node of a depth-4 tree


def _related(level, idx):
    if level <= DEPTH:
        return idx == NODE >> (DEPTH - level)
    return idx >> (level - DEPTH) == NODE


def _assert_untouched(a, b, level, atol=0.0):
    for idx in range(2 ** level):
        if not _related(level, idx):
            np.testing.assert_allclose(a[idx], b[idx], rtol=0, atol=atol,
                                       err_msg=f"node {level}:{idx}")


def test_type3_taint_stays_in_the_subtree(rng):
    inst = make_instance(511, n=1, m=1, N=4)
    _, _, base = optimal_system(inst)
    psi = [p.copy() for p in base.psi]
    lo, hi = NODE << (4 - DEPTH), (NODE + 1) << (4 - DEPTH)
    for p in psi:
        p[lo:hi] += rng.normal(size=p[lo:hi].shape)
    t3 = orc.solve_type3(inst.coeffs, inst.tree, psi)
    for name in ("YA", "YB", "YC", "YD"):
        for j in range(4):
            _assert_untouched(getattr(base.type3, name)[j], getattr(t3, name)[j], j)
    # changed ancestor values shift whole sibling subtrees by constants, which
    # cancels in the two-child differences only up to rounding
    for name in ("ZA", "ZB", "ZC", "ZD"):
        for key, z in getattr(base.type3, name).items():
            _assert_untouched(z, getattr(t3, name)[key], key[1], atol=1e-15)


def test_adjoint_taint_stays_in_the_subtree():
    inst = make_instance(511, n=1, m=1, N=4)
    ctl, X, base = optimal_system(inst)
    X2 = [x.copy() for x in X]
    X2[4][NODE << 2:(NODE + 1) << 2] += 3.0
    tainted = orc.solve_optimality_bsvies(inst.coeffs, inst.tree, X2, ctl)
    for j in range(4):
        _assert_untouched(base.Y[j], tainted.Y[j], j)
        _assert_untouched(base.Y0[j], tainted.Y0[j], j)
    # same rounding caveat as for the Type-III coefficients
    for key in base.Z:
        _assert_untouched(base.Z[key], tainted.Z[key], key[1], atol=1e-15)


def test_type3_with_zero_kernels_vanishes():
    inst = Instance(constant_problem(0, 0, 0, 0, 1.0, 1.0, 1.0, 1.0), 3)
    _, _, sysm = optimal_system(inst)
    t3 = sysm.type3
    for ys in (t3.YA, t3.YB, t3.YC, t3.YD):
        assert all(not np.any(y) for y in ys)


def test_type3_without_control_channels():
    inst = Instance(constant_problem(0.4, 0, 0.3, 0, 1.0, 1.0, 1.0, 1.0), 3)
    _, _, sysm = optimal_system(inst)
    t3 = sysm.type3
    assert all(not np.any(y) for y in t3.YB + t3.YD)
    assert any(np.any(y) for y in t3.YA) and any(np.any(y) for y in t3.YC)


def test_stationarity_along_qp_control():
    inst = make_instance(520, n=2, m=2, N=3)
    qp = orc.solve_adapted_qp(inst.coeffs, inst.tree, inst.chi0)
    _, _, sysm = optimal_system(inst, qp.control)
    rep = orc.check_stationarity(sysm, inst.coeffs, inst.tree)
    assert rep["mp_stationarity"].value <= 1e-8 * (1 + max(np.abs(u).max() for u in qp.control.u))
    assert rep.passed


def test_broken_stationarity_is_located():
    inst = make_instance(521, n=1, m=1, N=3)
    ctl = orc.feedback_on_tree(inst.sol, inst.lifted, inst.tree, inst.chi0)
    bad = ctl.perturbed(2, 3, 1.0)
    _, _, sysm = optimal_system(inst, bad)
    rep = orc.check_stationarity(sysm, inst.coeffs, inst.tree)
    mp = rep["mp_stationarity"]
    assert not mp.passed and mp.value > 0.5
    assert mp.argmax == "2:++"
    # both forms still agree off the optimum
    assert rep["stationarity_forms_agree"].passed
    json.loads(rep.to_json())


# -- dual representation -------------------------------------------------------------

def _dual(inst):
    ctl, X, sysm = optimal_system(inst)
    chib = orc.forecasts(inst.coeffs, inst.tree, inst.chi0, X, ctl)
    return orc.check_dual_representation(sysm, inst.sol, inst.tree, chib,
                                         inst.coeffs)["dual_representation"]


def test_dual_zero_weights():
    inst = Instance(constant_problem(0.3, 0.2, 0.1, 0.4, 0.0, 1.0, 0.0, 1.0), 3)
    assert _dual(inst).value == 0.0


def test_dual_without_control_channels():
    assert _dual(Instance(constant_problem(0.5, 0, -0.4, 0, 1.0, 1.0, 2.0, 1.0), 2)).value <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_dual_random_instances(seed):
    assert _dual(make_instance(600 + seed, n=2, m=1, N=3)).value <= 1e-8


def test_dual_detects_wrong_kernel():
    inst = make_instance(610, n=1, m=1, N=3)
    inst.sol.P[1] = inst.sol.P[1] * 1.01
    assert _dual(inst).value > 1e-6
