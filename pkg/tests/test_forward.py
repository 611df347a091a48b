import numpy as np
import pytest

from ftddp.core import GainSchedule, ProblemDefinition, TrajectoryGrid, ValueExpansion, total_cost
from ftddp.exceptions import DivergenceError, DomainError
from ftddp.forward import (
    LineSearchOptions,
    StepProposal,
    clamp_delta_tf,
    constraint_norm,
    limit_step,
    line_search,
    merit,
    rollout,
    simulate,
    update_multiplier_time,
)
from ftddp.models import QuadraticTerminal, make_problem

from conftest import LinearDynamics, lqr_problem


def expansion(k, V_nu=None, V_tf=0.0, V_nunu=None, V_tftf=0.0, V_nutf=None, n=1):
    return ValueExpansion(
        0.0, np.zeros(n), np.zeros(k) if V_nu is None else np.asarray(V_nu, float), V_tf,
        np.zeros((n, n)), np.zeros((k, k)) if V_nunu is None else np.asarray(V_nunu, float), V_tftf,
        np.zeros((n, k)), np.zeros(n), np.zeros(k) if V_nutf is None else np.asarray(V_nutf, float),
    )


def test_newton_step_example():
    ve0 = expansion(1, V_nunu=[[2.0]], V_tftf=4.0, V_nutf=[0.0])
    veT = expansion(1, V_nu=[1.0], V_tf=2.0)
    dnu, dtf = update_multiplier_time(ve0, veT)
    np.testing.assert_allclose(dnu, [-0.5])
    assert dtf == pytest.approx(-0.5)
    dnu, dtf = update_multiplier_time(ve0, veT, zeta=0.1)
    np.testing.assert_allclose(dnu, [-0.05])
    assert dtf == pytest.approx(-0.05)


def test_newton_step_zero_residual():
    ve0 = expansion(1, V_nunu=[[2.0]], V_tftf=4.0, V_nutf=[0.3])
    dnu, dtf = update_multiplier_time(ve0, expansion(1))
    np.testing.assert_array_equal(dnu, [0.0])
    assert dtf == 0.0


def test_newton_step_drops_flat_directions():
    ve0 = expansion(1, V_nunu=[[0.0]], V_tftf=4.0, V_nutf=[0.0])
    dnu, dtf = update_multiplier_time(ve0, expansion(1, V_nu=[1.0], V_tf=2.0))
    np.testing.assert_array_equal(dnu, [0.0])
    assert dtf == pytest.approx(-0.5)


def test_newton_step_rejects_bad_zeta():
    with pytest.raises(DomainError):
        update_multiplier_time(expansion(1), expansion(1), zeta=1.5)


def test_limit_step_clips_horizon_and_resolves_nu():
    ve0 = expansion(1, V_nunu=[[-2.0]], V_tftf=1.0, V_nutf=[0.5])
    veT = expansion(1, V_nu=[1.0], V_tf=3.0)
    dnu, dtf = limit_step(ve0, veT, [7.0], 10.0, tf=1.0, nu=[0.0])
    assert dtf == 0.5
    # nu row: -2 dnu + 0.5 * 0.5 = -1
    np.testing.assert_allclose(dnu, [(1.0 + 0.25) / 2.0])


def test_limit_step_scales_nu():
    ve0 = expansion(2)
    dnu, dtf = limit_step(ve0, expansion(2), [4.0, -2.0], 0.1, tf=1.0, nu=[2.0, 0.0], nu_trust=1.0)
    np.testing.assert_allclose(dnu, [2.0, -1.0])
    assert dtf == 0.1


def test_clamp_delta_tf():
    assert clamp_delta_tf(1.0, -2.0) == pytest.approx(0.05 - 1.0)
    assert clamp_delta_tf(1.0, 0.3) == pytest.approx(0.3)
    assert clamp_delta_tf(99.0, 5.0) == pytest.approx(1.0)


def test_step_proposal_validation():
    with pytest.raises(DomainError):
        StepProposal(0.0, 0.5, [0.0], 0.0)
    with pytest.raises(DomainError):
        StepProposal(0.5, -0.1, [0.0], 0.0)


def test_constant_unit_control_on_double_integrator():
    p = make_problem("double_integrator", R=1.0)
    traj = simulate(p, np.ones((10, 1)), 1.0)
    np.testing.assert_allclose(traj.states[-1], [0.5, 1.0], atol=1e-14)
    assert total_cost(p, traj, [0.0]) == pytest.approx(1.5, abs=1e-14)
    assert constraint_norm(p, traj) == pytest.approx(0.5)
    assert merit(p, traj, [0.0], 2.0) == pytest.approx(2.5)


def test_rollout_with_zero_step_reproduces_nominal():
    p = make_problem("cart_pole")
    rng = np.random.default_rng(5)
    prev = simulate(p, rng.normal(size=(30, 1)), 1.2)
    gains = GainSchedule.zeros(30, 4, 1, 2)
    gains = GainSchedule(gains.l, rng.normal(size=(30, 1, 4)), rng.normal(size=(30, 1, 2)), rng.normal(size=(30, 1)))
    traj, cost = rollout(p, prev, gains, StepProposal(1.0, 0.0, [0.0, 0.0], 0.0), [0.1, 0.2])
    np.testing.assert_array_equal(traj.states, prev.states)
    np.testing.assert_array_equal(traj.controls, prev.controls)
    assert cost == total_cost(p, prev, [0.1, 0.2])


def test_rollout_applies_every_term():
    p = lqr_problem([[0.0]], [[1.0]], [[0.0]], [[1.0]])
    prev = TrajectoryGrid.constant(1.0, 2, [0.0], [1.0])
    gains = GainSchedule(np.full((2, 1), 2.0), np.zeros((2, 1, 1)), np.zeros((2, 1, 0)), np.full((2, 1), 3.0))
    traj, _ = rollout(p, prev, gains, StepProposal(0.5, 1.0, [], 0.1), [])
    # 1 + 0.5 * 2 + 3 * 0.1
    np.testing.assert_allclose(traj.controls, 2.3)
    assert traj.tf == pytest.approx(1.1)


def test_rollout_state_feedback_uses_matching_knots():
    p = lqr_problem([[0.0]], [[1.0]], [[0.0]], [[1.0]])
    p = ProblemDefinition(p.dynamics, p.running_cost, p.terminal, [1.0], [], 1.0)
    prev = TrajectoryGrid.constant(1.0, 4, [0.0], [0.0])
    gains = GainSchedule(np.zeros((4, 1)), np.full((4, 1, 1), -1.0), np.zeros((4, 1, 0)), np.zeros((4, 1)))
    traj, _ = rollout(p, prev, gains, StepProposal(1.0, 0.0, [], 0.0), [])
    # x' = -x sampled and held, x_{i+1} = x_i (1 - dt) exactly for piecewise-constant u
    assert traj.controls[0, 0] == -1.0
    np.testing.assert_allclose(traj.states[:, 0], 0.75 ** np.arange(5))


def test_rollout_divergence_is_reported():
    dyn = LinearDynamics([[60.0]], [[1.0]])
    p = ProblemDefinition(dyn, make_problem("double_integrator").running_cost, QuadraticTerminal(1), [1.0], [], 1.0)
    with pytest.raises(DivergenceError):
        simulate(p, np.zeros((50, 1)), 1.0)


def test_rollout_error_is_fourth_order():
    p = make_problem("cart_pole")
    x_ref = simulate(p, np.full((4000, 1), 2.0), 1.0).states[-1]
    err = [np.abs(simulate(p, np.full((N, 1), 2.0), 1.0).states[-1] - x_ref).max() for N in (20, 40)]
    assert 12.0 <= err[0] / err[1] <= 20.0


def test_rollout_rejects_mismatched_gains():
    p = make_problem("double_integrator")
    prev = simulate(p, np.zeros((5, 1)), 1.0)
    with pytest.raises(DomainError):
        rollout(p, prev, GainSchedule.zeros(4, 2, 1, 1), StepProposal(1.0, 0.0, [0.0], 0.0), [0.0])


@pytest.fixture
def effort_problem():
    # L = u^2 / 2 and nothing else
    return lqr_problem([[0.0]], [[0.0]], [[0.0]], [[1.0]])


def _gains(N, l):
    return GainSchedule(np.full((N, 1), l), np.zeros((N, 1, 1)), np.zeros((N, 1, 0)), np.zeros((N, 1)))


def test_line_search_accepts_descent_immediately(effort_problem):
    prev = TrajectoryGrid.constant(1.0, 4, [0.0], [1.0])
    res = line_search(effort_problem, prev, _gains(4, -1.0), expansion(0), expansion(0), [],
                      LineSearchOptions(gamma_max=1.0, zeta=0.0))
    assert res.halvings == 0 and not res.stalled
    assert res.gamma == 1.0 and res.cost == pytest.approx(0.0)


def test_line_search_halves_once(effort_problem):
    prev = TrajectoryGrid.constant(1.0, 4, [0.0], [1.0])
    res = line_search(effort_problem, prev, _gains(4, -3.0), expansion(0), expansion(0), [],
                      LineSearchOptions(gamma_max=1.0, zeta=0.0))
    assert res.halvings == 1 and res.gamma == 0.5
    assert res.cost == pytest.approx(0.125)
    assert res.merit < res.merit_reference


def test_line_search_stalls_on_zero_gains(effort_problem):
    prev = TrajectoryGrid.constant(1.0, 4, [0.0], [1.0])
    res = line_search(effort_problem, prev, _gains(4, 0.0), expansion(0), expansion(0), [],
                      LineSearchOptions(gamma_max=1.0, zeta=0.5))
    assert res.stalled and res.halvings == 0
    np.testing.assert_array_equal(res.traj.controls, prev.controls)


def test_line_search_falls_back_to_control_only_step():
    # the multiplier step makes every joint candidate worse; controls alone improve
    p = make_problem("double_integrator", R=1.0)
    prev = simulate(p, np.ones((20, 1)), 1.0)
    ve0 = expansion(1, V_nunu=[[-1.0]], V_tftf=1.0, V_nutf=[0.0], n=2)
    veT = expansion(1, V_nu=[-100.0], V_tf=0.0, n=2)
    l = -0.5 * np.ones((20, 1))
    gains = GainSchedule(l, np.zeros((20, 1, 2)), np.ones((20, 1, 1)), np.zeros((20, 1)))
    res = line_search(p, prev, gains, ve0, veT, [0.0], LineSearchOptions(gamma_max=1.0, zeta=1.0, max_halvings=2))
    assert res.zeta == 0.0 and not res.stalled
    np.testing.assert_array_equal(res.nu, [0.0])
