"""Comparison schemes sharing the models and sub-solvers of the joint design."""

from __future__ import annotations

import dataclasses
from enum import Enum

import numpy as np

from .bcd import SolveResult, solve
from .convergence import check_feasibility
from .errors import InfeasibleError
from .model import channel_gains
from .problem import constraint_residuals
from .sched_time import solve_sched_time


class SchemeId(str, Enum):
    JOINT = "joint"
    STATIC_UAV = "static_uav"
    STATIC_UAV_HS = "static_uav_hs"
    FULL_SCHEDULING = "full_scheduling"

    @classmethod
    def parse(cls, name: str) -> "SchemeId":
        try:
            return cls(name)
        except ValueError:
            raise ValueError(f"unknown scheme {name!r}; choose from {[s.value for s in cls]}") from None


def run_static_uav(scenario, opts=None) -> SolveResult:
    """UAV hovers at its launch point; one scheduling/time solve."""
    opts = dataclasses.replace(opts or scenario.options, max_outer=0)
    return solve(scenario, opts)


def gain_order_schedule(scenario) -> np.ndarray:
    """Whole devices in descending channel gain at the launch point until accuracy holds.

    Equal gains keep the lower device index first.
    """
    arr = scenario.arrays
    q0 = np.asarray(scenario.uav.initial_position, dtype=float)[None, :]
    gains = channel_gains(q0, arr.positions, scenario.uav.altitude, scenario.channel.ref_gain)[:, 0]
    A = np.zeros((scenario.K, scenario.N), dtype=np.int8)
    covered = 0.0
    for k in np.argsort(-gains, kind="stable"):
        if covered >= arr.accuracy_C:
            break
        A[k] = 1
        covered += scenario.N * arr.sq_sizes[k]
    if covered < arr.accuracy_C:
        raise InfeasibleError("accuracy constant exceeds full participation")
    return A


def run_static_uav_hs(scenario, opts=None) -> SolveResult:
    """Static UAV with the strongest devices always scheduled; only times are optimised."""
    opts = opts or scenario.options
    report = check_feasibility(scenario)
    if not report.feasible:
        raise InfeasibleError("; ".join(report.reasons), report=report)
    A = gain_order_schedule(scenario)
    Q = scenario.static_trajectory()
    sub = solve_sched_time(scenario, Q, opts, fixed_schedule=A)
    T = float(sub.delta.sum())
    return SolveResult(
        completion_time=T,
        schedule=sub.schedule,
        tau=sub.tau,
        delta=sub.delta,
        trajectory=Q,
        history=[T],
        feasibility=report,
        converged=True,
        iterations=0,
        residuals=constraint_residuals(scenario, sub.schedule, sub.tau, sub.delta, Q),
        dual_bound=sub.dual_objective,
    )


def run_full_scheduling(scenario, opts=None) -> SolveResult:
    """Every device uploads in every round; BCD over times and trajectory only."""
    return solve(scenario, opts, fixed_schedule=np.ones((scenario.K, scenario.N), dtype=np.int8))


def run_joint(scenario, opts=None) -> SolveResult:
    return solve(scenario, opts)


RUNNERS = {
    SchemeId.JOINT: run_joint,
    SchemeId.STATIC_UAV: run_static_uav,
    SchemeId.STATIC_UAV_HS: run_static_uav_hs,
    SchemeId.FULL_SCHEDULING: run_full_scheduling,
}


def run_scheme(scheme, scenario, opts=None) -> SolveResult:
    return RUNNERS[SchemeId.parse(scheme) if isinstance(scheme, str) else scheme](scenario, opts)
