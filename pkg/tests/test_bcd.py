import dataclasses

import numpy as np
import pytest

import uavfl.bcd as bcd
from cases import desk_scenario, scheme_result
from uavfl.bcd import MONOTONE_TOL, solve
from uavfl.errors import InfeasibleError, MonotonicityViolation
from uavfl.problem import max_violation
from uavfl.scenario import generate_scenario


def small(seed=0, **kw):
    return generate_scenario(seed, 5, scale=0.02, **kw)


def test_joint_solve_invariants():
    sc = desk_scenario(0)
    r = scheme_result(0)
    h = np.array(r.history)
    assert np.all(np.diff(h) <= MONOTONE_TOL * h[:-1])
    assert r.completion_time == pytest.approx(r.delta.sum(), abs=1e-9)
    assert r.completion_time == pytest.approx(h[-1], rel=1e-12)
    assert max_violation(r.residuals) <= sc.options.feas_tol
    assert r.converged and r.iterations <= sc.options.max_outer
    np.testing.assert_array_equal(r.trajectory[0], sc.uav.initial_position)
    assert r.dual_bound <= r.completion_time * (1 + 1e-9)


def test_zero_outer_iterations_is_one_inner_solve():
    sc = small()
    opts = dataclasses.replace(sc.options, max_outer=0)
    r = solve(sc, opts)
    assert r.iterations == 0 and len(r.history) == 1 and r.converged
    assert np.all(r.trajectory == np.asarray(sc.uav.initial_position))


def test_infeasible_target_carries_report():
    sc = small(epsilon=1e-4)
    with pytest.raises(InfeasibleError) as info:
        solve(sc)
    report = info.value.report
    assert report is not None and not report.feasible and report.reasons


def test_larger_budget_is_not_slower():
    t10 = solve(small(1, energy=10.0)).completion_time
    t30 = solve(small(1, energy=30.0)).completion_time
    assert t30 <= t10 * (1 + 1e-9)


def test_fixed_schedule_is_kept():
    sc = small(2)
    A = np.ones((sc.K, sc.N), dtype=np.int8)
    r = solve(sc, fixed_schedule=A)
    assert np.array_equal(r.schedule, A)


def test_initial_trajectory_is_used():
    sc = small(3)
    start = np.asarray(sc.uav.initial_position)
    Q0 = start + np.outer(np.arange(sc.N + 1), [0.0, 1.0])
    r = solve(sc, dataclasses.replace(sc.options, max_outer=0), initial_trajectory=Q0)
    np.testing.assert_array_equal(r.trajectory, Q0)
    assert np.all(r.delta >= 1.0 / sc.uav.max_speed - 1e-12)


def test_rising_objective_is_rejected(monkeypatch):
    sc = small(4)
    real = bcd.solve_sched_time
    calls = []

    def worse(*args, **kwargs):
        sol = real(*args, **kwargs)
        calls.append(1)
        if len(calls) > 1:
            sol.delta = sol.delta * 1.5
            sol.primal_objective *= 1.5
        return sol

    monkeypatch.setattr(bcd, "solve_sched_time", worse)
    with pytest.raises(MonotonicityViolation):
        solve(sc)


def test_traces_collected():
    sc = small(5)
    r = solve(sc, dataclasses.replace(sc.options, trace=True))
    assert r.sched_trace and "dual_objective" in r.sched_trace[0]
    if r.iterations:
        assert r.traj_trace and "radius_scale" in r.traj_trace[0]
