import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonasym_mf import core
from nonasym_mf.core import (
    ActionProfile,
    PayoffSpec,
    TrajectoryProfile,
    check_indistinguishable,
    collaborative_effort,
    error_bound_dynamic,
    error_bound_static,
    near_indistinguishability_gap,
    second_derivatives,
    symmetric_quadratic,
    symmetric_reduce,
    verify_ess,
    verify_nash,
    verify_strong_nash,
)
from nonasym_mf.errors import DegenerateGameError, DomainError, NonFiniteEvaluation


def pair_product():
    return PayoffSpec(n=2, evaluate=lambda a: a[0] * a[1], action_bounds=(0.0, 1.0))


def test_action_profile_fields():
    prof = ActionProfile([1.0, 0.0, 2.0])
    assert prof.mean == pytest.approx(1.0)
    assert prof.deviation_sq == pytest.approx(2.0)
    assert prof.epsilon == pytest.approx(1.0)
    assert ActionProfile([0.3] * 4).deviation_sq == 0.0


# -- check_indistinguishable ------------------------------------------------

def test_product_is_indistinguishable():
    rep = check_indistinguishable(pair_product(), samples=50, seed=1)
    assert rep.passed and rep.max_violation == 0.0


def test_difference_is_not_indistinguishable():
    p = PayoffSpec(n=2, evaluate=lambda a: a[0] - a[1], action_bounds=(0.0, 1.0))
    rep = check_indistinguishable(p, samples=1, seed=0, profiles=[[1.0, 0.0]])
    assert not rep.passed
    assert rep.max_violation == pytest.approx(2.0)
    assert rep.worst_profile == [1.0, 0.0]


def test_collaborative_product_n5():
    assert check_indistinguishable(collaborative_effort(5), samples=100, seed=3).passed


def test_non_finite_payoff_reports_profile():
    p = PayoffSpec(n=2, evaluate=lambda a: 1.0 / (a[0] - 0.5), action_bounds=(0.0, 1.0))
    with pytest.raises(NonFiniteEvaluation) as exc:
        check_indistinguishable(p, samples=1, profiles=[[0.5, 0.2]])
    assert exc.value.point == [0.5, 0.2]


# -- reduction and derivatives ---------------------------------------------

def test_symmetric_reduce_examples():
    prod3 = PayoffSpec(n=3, evaluate=lambda a: float(np.prod(a)))
    assert symmetric_reduce(prod3, 0.5) == pytest.approx(0.125)
    assert symmetric_reduce(pair_product(), 0.5) == pytest.approx(0.25)
    lin = PayoffSpec(n=4, evaluate=lambda a: float(np.sum(a)), action_bounds=(0.0, 2.0))
    assert symmetric_reduce(lin, 1.0) == pytest.approx(4.0)
    with pytest.raises(DomainError):
        symmetric_reduce(pair_product(), 1.5)


def test_second_derivatives_pair_product():
    rb2, d2 = second_derivatives(pair_product(), 0.5)
    assert rb2 == pytest.approx(2.0, abs=1e-4)
    assert d2 == pytest.approx(0.0, abs=1e-4)


def test_second_derivatives_square_of_sum():
    p = PayoffSpec(n=3, evaluate=lambda a: float(np.sum(a)) ** 2 / 3, action_bounds=(-5.0, 5.0))
    for m in (-1.3, 0.0, 2.2):
        rb2, d2 = second_derivatives(p, m, h=0.1)
        assert rb2 == pytest.approx(6.0, abs=1e-9)
        assert d2 == pytest.approx(2.0 / 3.0, abs=1e-9)


def test_second_derivatives_linear():
    p = PayoffSpec(n=3, evaluate=lambda a: float(np.sum(a)))
    rb2, d2 = second_derivatives(p, 0.5)
    assert rb2 == pytest.approx(0.0, abs=1e-4)
    assert d2 == pytest.approx(0.0, abs=1e-4)


def test_second_derivatives_step_outside_bounds():
    with pytest.raises(DomainError):
        second_derivatives(pair_product(), 1.0)


# -- static and dynamic bounds ----------------------------------------------

def test_error_bound_pair_product_corner():
    # r = a1 a2 at (1, 0): mbar=1/2, delta=|1*(-2/4+0)|=1/2, sum dev^2=1/2
    rep = error_bound_static(pair_product(), [1.0, 0.0], h=0.25)
    assert rep.delta == pytest.approx(0.5, abs=1e-12)
    assert rep.bound == pytest.approx(0.25, abs=1e-12)
    assert rep.gap == pytest.approx(0.25, abs=1e-15)


def test_error_bound_symmetric_profile_is_zero():
    rep = error_bound_static(collaborative_effort(4), [0.3] * 4)
    assert rep.bound == 0.0 and rep.gap == 0.0


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_worked_product_example(eps):
    rep = error_bound_static(pair_product(), [1.0, (1 - eps) ** 2])
    assert rep.gap == pytest.approx(eps**4 / 4 + (1 - eps) * eps**2, abs=1e-12)
    assert rep.bound <= eps**2


def test_error_bound_requires_two_players():
    p = PayoffSpec(n=1, evaluate=lambda a: a[0] ** 2)
    with pytest.raises(DegenerateGameError):
        error_bound_static(p, [0.5])


def test_dynamic_single_period_matches_static():
    s = error_bound_static(pair_product(), [0.9, 0.2], h=0.05)
    d = error_bound_dynamic(pair_product(), [[0.9, 0.2]], h=0.05)
    assert d.delta == s.delta and d.bound == s.bound and d.gap == s.gap


def test_dynamic_constant_symmetric_trajectory():
    d = error_bound_dynamic(collaborative_effort(3), [[0.4] * 3] * 5)
    assert d.bound == 0.0 and d.gap == 0.0


def test_dynamic_three_period_example():
    d = error_bound_dynamic(pair_product(), [[1, 0], [1, 0], [0.5, 0.5]], h=0.25)
    assert d.gap == pytest.approx(0.5, abs=1e-12)
    assert d.bound == pytest.approx(0.5, abs=1e-12)


def test_dynamic_empty_horizon():
    with pytest.raises(DomainError):
        error_bound_dynamic(pair_product(), TrajectoryProfile([]))


def test_trajectory_l2_is_sum_of_periods():
    traj = TrajectoryProfile([[1, 0], [0.2, 0.6], [0.5, 0.5]])
    assert traj.l2_deviation == pytest.approx(sum(p.deviation_sq for p in traj.profiles))
    assert traj.l2_deviation >= 0


def test_report_record_keys():
    rec = error_bound_static(pair_product(), [1.0, 0.0]).as_record()
    assert set(rec) == {"delta", "bound", "gap", "n", "epsilon"}


# -- near indistinguishability ----------------------------------------------

def test_near_indistinguishability_identical():
    ref = collaborative_effort(3)
    rep = near_indistinguishability_gap([ref] * 3, ref, samples=200, seed=0)
    assert rep.eps_nonscalable == 0.0 and rep.eps_scalable == 0.0


def test_near_indistinguishability_offset():
    ref = collaborative_effort(4)
    players = [lambda a, j=j: ref(a) + 0.01 * (-1) ** j for j in range(4)]
    rep = near_indistinguishability_gap(players, ref, samples=500, seed=2)
    assert rep.eps_nonscalable == pytest.approx(0.01, abs=1e-12)


def test_near_indistinguishability_scaled():
    ref = collaborative_effort(3)
    players = [lambda a: 1.05 * ref(a)] * 3
    rep = near_indistinguishability_gap(players, ref, samples=500, seed=2)
    assert rep.eps_scalable == pytest.approx(0.05, rel=1e-9)
    assert rep.samples == 500 and rep.seed == 2


# -- game verifiers ----------------------------------------------------------

def test_full_effort_is_nash_and_strong_nash():
    p = collaborative_effort(4)
    assert verify_nash(p, [1.0] * 4, grid_points=21).passed
    assert verify_strong_nash(p, [1.0] * 4, grid_points=4).passed


def test_zero_effort_is_nash():
    assert verify_nash(collaborative_effort(4), [0.0] * 4, grid_points=21).passed


def test_half_effort_is_not_nash():
    rep = verify_nash(collaborative_effort(2), [0.5, 0.5], grid_points=11)
    assert not rep.passed
    assert rep.best_action == pytest.approx(1.0)
    assert rep.best_improvement == pytest.approx(0.25)


def test_zero_effort_not_strong_nash():
    # the grand coalition moving to full effort makes everyone better off
    assert not verify_strong_nash(collaborative_effort(3), [0.0] * 3, grid_points=3).passed


def test_price_of_anarchy():
    poa, pos = core.price_of_anarchy([0.0, 1.0], optimum=1.0)
    assert poa == 0.0 and pos == 1.0


def test_zero_effort_not_ess():
    rep = verify_ess(collaborative_effort(3), 0.0)
    assert not rep.passed
    assert rep.failing_invaders


def test_full_effort_ess_n2():
    assert verify_ess(collaborative_effort(2), 1.0).passed


def test_ess_excludes_candidate_as_invader():
    rep = verify_ess(collaborative_effort(2), 1.0, invaders=[1.0, 0.5])
    assert list(rep.eps_threshold) == [0.5]


# -- properties --------------------------------------------------------------

quad_coeffs = st.tuples(*[st.floats(-3, 3, allow_nan=False) for _ in range(4)])


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 8), c=quad_coeffs,
       acts=st.lists(st.floats(-1, 1, allow_nan=False), min_size=8, max_size=8))
def test_quadratic_gap_equals_bound(n, c, acts):
    p = symmetric_quadratic(n, *c)
    rep = error_bound_static(p, acts[:n], h=0.5)
    assert abs(rep.gap - rep.bound) <= 1e-9 * max(1.0, rep.bound)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 6), m=st.floats(0.2, 0.8),
       raw=st.lists(st.floats(-1, 1, allow_nan=False), min_size=6, max_size=6))
def test_first_order_cancels_along_zero_sum_directions(n, m, raw):
    d = np.asarray(raw[:n]) - np.mean(raw[:n])
    p = PayoffSpec(n=n, evaluate=lambda a: math.exp(float(np.mean(a**2))) + float(np.prod(a)))
    assert abs(core.first_order_directional(p, m, d)) < 1e-6


@pytest.mark.parametrize("n", [3, 4, 5])
def test_cross_derivatives_label_independent(n):
    p = PayoffSpec(n=n, evaluate=lambda a: math.exp(float(np.mean(a**2))) * float(np.prod(a)))
    vals = [core.cross_derivative(p, 0.6, i, j) for i in range(n) for j in range(n) if i < j]
    assert max(vals) - min(vals) < 1e-6


@settings(max_examples=30, deadline=None)
@given(perm_seed=st.integers(0, 10_000),
       acts=st.lists(st.floats(0.05, 0.95, allow_nan=False), min_size=5, max_size=5))
def test_reports_invariant_under_relabelling(perm_seed, acts):
    p = PayoffSpec(n=5, evaluate=lambda a: float(np.prod(a)) + float(np.sum(a) ** 3))
    perm = np.random.default_rng(perm_seed).permutation(5)
    a = np.asarray(acts)
    r1 = error_bound_static(p, a)
    r2 = error_bound_static(p, a[perm])
    assert r1.delta == pytest.approx(r2.delta, rel=1e-9, abs=1e-12)
    assert r1.bound == pytest.approx(r2.bound, rel=1e-9, abs=1e-12)
    assert r1.gap == pytest.approx(r2.gap, rel=1e-9, abs=1e-12)


def test_second_order_convergence_slope():
    p = PayoffSpec(n=3, evaluate=lambda a: float(np.prod(a)))
    gamma = np.array([1.0, -0.5, -0.5])
    eps = np.geomspace(1e-1, 1e-3, 7)
    gaps = [error_bound_static(p, 0.5 + e * gamma).gap for e in eps]
    slope = np.polyfit(np.log(eps), np.log(gaps), 1)[0]
    assert abs(slope - 2) < 0.1
    # ratio tends to delta * sum gamma^2
    rep = error_bound_static(p, 0.5 + 1e-3 * gamma)
    assert gaps[-1] / 1e-6 == pytest.approx(rep.delta * float(gamma @ gamma), rel=1e-2)
