"""Outer block coordinate descent over (schedule, time) and trajectory."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .convergence import FeasibilityReport, check_feasibility
from .errors import InfeasibleError, MonotonicityViolation, NonConvergenceError
from .options import SolverOptions
from .problem import SchedProblem, constraint_residuals, max_violation
from .sched_time import SubSolution, allocate_time, solve_sched_time
from .trajectory import solve_trajectory

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9


@dataclass
class SolveResult:
    completion_time: float
    schedule: np.ndarray
    tau: np.ndarray
    delta: np.ndarray
    trajectory: np.ndarray
    history: list[float]
    feasibility: FeasibilityReport
    converged: bool
    iterations: int
    residuals: dict = field(default_factory=dict)
    dual_bound: float = np.nan
    sched_trace: list = field(default_factory=list)
    traj_trace: list = field(default_factory=list)

    @property
    def scheduled_fraction(self) -> float:
        return float(self.schedule.mean())

    def speeds(self) -> np.ndarray:
        steps = np.hypot(*np.diff(self.trajectory, axis=0).T)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.delta > 0, steps / self.delta, 0.0)


def _trajectory_step(scenario, sub: SubSolution, Q, opts):
    """Best trajectory over the candidate radius scales.

    Each candidate comes from the energy-minimising trajectory block with
    shrunken movement balls and is scored by the exact completion time of
    the current schedule re-timed on it. Returns ``(T, trajectory, trace)``.
    """
    best_T, best_Q, trace = np.inf, None, []
    for scale in opts.radius_scales:
        try:
            traj = solve_trajectory(scenario, sub.schedule, sub.tau, sub.delta, opts, incumbent=Q,
                                    radius_scale=scale)
            alloc = allocate_time(SchedProblem.build(scenario, traj.points), sub.schedule)
        except (InfeasibleError, NonConvergenceError) as exc:
            log.debug("radius scale %.3g rejected: %s", scale, exc)
            continue
        trace.extend(dict(t, radius_scale=scale) for t in traj.trace)
        if alloc.objective < best_T:
            best_T, best_Q = alloc.objective, traj.points
    return best_T, best_Q, trace


def solve(scenario, opts: SolverOptions | None = None, fixed_schedule=None,
          initial_trajectory=None) -> SolveResult:
    """Alternate the two blocks until the fractional decrease drops below ``bcd_tol``.

    Raises ``InfeasibleError`` carrying the feasibility report when the
    accuracy target or the energy floor rules the scenario out.
    """
    opts = opts or scenario.options
    if opts is not scenario.options:
        scenario = scenario.with_options(**opts.to_dict())
    report = check_feasibility(scenario)
    if not report.feasible:
        raise InfeasibleError("; ".join(report.reasons), report=report)
    Q = scenario.static_trajectory() if initial_trajectory is None else np.asarray(initial_trajectory, float)
    sub = solve_sched_time(scenario, Q, opts, fixed_schedule=fixed_schedule)
    history = [sub.primal_objective]
    sched_trace = list(sub.trace)
    traj_trace: list = []
    converged = opts.max_outer == 0
    it = 0
    for it in range(1, opts.max_outer + 1):
        T_old = history[-1]
        T_cand, Q_cand, trace = _trajectory_step(scenario, sub, Q, opts)
        traj_trace.extend(trace)
        if Q_cand is None or T_cand >= T_old:
            # no trajectory improves on the current point: stationary
            history.append(T_old)
            converged = True
            break
        new = solve_sched_time(scenario, Q_cand, opts, warm=sub.dual, incumbent=sub.schedule,
                               fixed_schedule=fixed_schedule)
        sched_trace.extend(new.trace)
        T_new = new.primal_objective
        if T_new > T_old * (1 + MONOTONE_TOL):
            raise MonotonicityViolation(f"completion time rose from {T_old:.12g} to {T_new:.12g} at iteration {it}")
        history.append(T_new)
        Q, sub = Q_cand, new
        frac = (T_old - T_new) / T_old if T_old > 0 else 0.0
        log.info("bcd iteration %d: T=%.6g (decrease %.3g)", it, T_new, frac)
        if frac < opts.bcd_tol:
            converged = True
            break
    res = constraint_residuals(scenario, sub.schedule, sub.tau, sub.delta, Q)
    return SolveResult(
        completion_time=float(sub.delta.sum()),
        schedule=sub.schedule,
        tau=sub.tau,
        delta=sub.delta,
        trajectory=Q,
        history=history,
        feasibility=report,
        converged=converged,
        iterations=it,
        residuals=res,
        dual_bound=sub.dual_objective,
        sched_trace=sched_trace,
        traj_trace=traj_trace,
    )
