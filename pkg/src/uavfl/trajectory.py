"""UAV trajectory for a fixed schedule and time allocation.

With the upload times fixed, device ``k`` spends ``b_k[n] (H^2 + |q[n] - u_k|^2)``
joules in slot ``n``. The trajectory block minimises the horizontal part of
the total energy subject to each device staying within its budget and the
UAV respecting the per-slot movement radius. Dual ascent on the per-device
multipliers ``gamma`` alternates with a forward sweep that moves the UAV
towards the weighted centroid of the scheduled devices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleError, NonConvergenceError
from .numerics import StepSchedule, step
from .options import SolverOptions
from .problem import movement_times


@dataclass
class TrajectoryState:
    points: np.ndarray  # (N+1) x 2
    gamma: np.ndarray
    residual_energy: np.ndarray
    weights: np.ndarray
    objective: float = np.nan
    duality_gap: float = np.nan
    converged: bool = False
    iterations: int = 0
    used_incumbent: bool = False
    trace: list = field(default_factory=list)


def residual_terms(scenario, schedule, tau) -> tuple[np.ndarray, np.ndarray]:
    """Energy left for the horizontal part of the uplink, and the per-slot weights."""
    ch = scenario.channel
    arr = scenario.arrays
    a = np.asarray(schedule).astype(bool)
    tau = np.asarray(tau, dtype=float)
    t = np.where(a, tau, 1.0)
    with np.errstate(over="ignore"):
        b = np.where(a, t * ch.noise_power / ch.ref_gain * np.expm1(ch.upload_scale / t), 0.0)
    H2 = scenario.uav.altitude ** 2
    residual = arr.budget - a.sum(axis=1) * arr.comp_energy - H2 * b.sum(axis=1)
    return residual, b


def slot_radii(delta, uav) -> np.ndarray:
    return np.minimum(uav.max_speed * np.asarray(delta, dtype=float), uav.max_step)


def device_usage(points, weights, positions) -> np.ndarray:
    """``sum_n b_k[n] |q[n] - u_k|^2`` for every device."""
    q = np.asarray(points, dtype=float)[1:]
    d2 = ((q[None, :, :] - positions[:, None, :]) ** 2).sum(axis=-1)
    return (weights * d2).sum(axis=1)


def q_update(weights, gamma, positions, start, radii) -> np.ndarray:
    """Forward sweep: each slot steps towards the weighted device centroid.

    A slot with zero total weight holds the previous position.
    """
    w = (1.0 + np.asarray(gamma, dtype=float))[:, None] * np.asarray(weights, dtype=float)
    total = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = (w.T @ positions) / total[:, None]
    N = w.shape[1]
    out = np.empty((N + 1, 2))
    x, y = float(start[0]), float(start[1])
    out[0] = x, y
    # scalar loop: the sweep is sequential and tiny per slot
    cx, cy = centroid[:, 0].tolist(), centroid[:, 1].tolist()
    r = np.asarray(radii, dtype=float).tolist()
    live = (total > 0).tolist()
    for n in range(N):
        if live[n]:
            dx, dy = cx[n] - x, cy[n] - y
            dist = math.hypot(dx, dy)
            if dist > r[n]:
                f = r[n] / dist
                dx, dy = dx * f, dy * f
            x, y = x + dx, y + dy
        out[n + 1] = x, y
    return out


def gamma_update(gamma, violation, schedule: StepSchedule, iteration: int) -> np.ndarray:
    """Projected subgradient step on the per-device energy multipliers."""
    return np.maximum(np.asarray(gamma, dtype=float) + step(schedule, iteration) * np.asarray(violation), 0.0)


def solve_trajectory(scenario, schedule, tau, delta, opts: SolverOptions | None = None,
                     incumbent=None, radius_scale: float = 1.0) -> TrajectoryState:
    """Trajectory minimising horizontal upload energy under per-device budgets.

    ``incumbent`` is a trajectory known to satisfy the budgets for this
    ``(schedule, tau)``; it is returned when dual ascent finds nothing
    better. The subgradient uses violations normalised by the residual
    energy ``E_bar``.
    ``radius_scale`` in (0, 1] shrinks every movement ball, leaving part of
    each slot free for the next time allocation.
    """
    opts = opts or scenario.options
    uav = scenario.uav
    positions = scenario.arrays.positions
    budget = scenario.arrays.budget
    residual, b = residual_terms(scenario, schedule, tau)
    if not 0 < radius_scale <= 1:
        raise ValueError("radius_scale must lie in (0, 1]")
    radii = radius_scale * slot_radii(delta, uav)
    start = np.asarray(uav.initial_position, dtype=float)
    active = b.sum(axis=1) > 0
    short = np.flatnonzero(active & (residual < -opts.feas_tol * budget))
    if short.size:
        raise InfeasibleError(
            f"upload energy exceeds budget even directly overhead for devices {short.tolist()}",
            violations={int(k): float(-residual[k]) for k in short},
        )
    K = b.shape[0]
    gamma = np.zeros(K)
    state = TrajectoryState(np.tile(start, (b.shape[1] + 1, 1)), gamma, residual, b)
    if not active.any():
        state.objective, state.duality_gap, state.converged = 0.0, 0.0, True
        return state

    sched = StepSchedule(opts.traj_step, opts.step_mode)
    tol_energy = opts.feas_tol * budget
    # violations relative to the horizontal allowance; the altitude part of
    # the budget is fixed and would only dilute the step
    norm = np.maximum(residual, tol_energy)
    best_q, best_obj, best_dual = None, np.inf, -np.inf
    inc_obj = np.inf
    if incumbent is not None:
        inc = np.asarray(incumbent, dtype=float)
        steps = np.hypot(*np.diff(inc, axis=0).T)
        usage = device_usage(inc, b, positions)
        if np.all(steps <= radii + 1e-9) and np.all(usage <= residual + tol_energy):
            best_q, best_obj = inc, float(usage.sum())
            inc_obj = best_obj
    prev_obj = np.inf
    converged, it = False, 0
    for it in range(1, opts.traj_max_iters + 1):
        q = q_update(b, gamma, positions, start, radii)
        usage = device_usage(q, b, positions)
        viol = usage - residual
        obj = float(usage.sum())
        dual = obj + float(gamma @ viol)
        best_dual = max(best_dual, dual)
        if np.all(viol <= tol_energy) and obj < best_obj:
            best_q, best_obj = q, obj
        if opts.trace:
            state.trace.append({"iteration": it, "objective": obj,
                                "max_violation": float(np.max(viol / budget))})
        new_gamma = gamma_update(gamma, np.where(active, viol / norm, 0.0), sched, it)
        change = float(np.max(np.abs(new_gamma - gamma)))
        gamma = new_gamma
        if change < opts.traj_tol and abs(prev_obj - obj) <= 1e-9 * max(obj, 1e-300):
            converged = True
            break
        prev_obj = obj

    if best_q is None and gamma.any():
        best_q = _scale_to_feasible(b, gamma, positions, start, radii, residual + tol_energy)
        if best_q is not None:
            best_obj = float(device_usage(best_q, b, positions).sum())
    if best_q is None:
        raise NonConvergenceError("trajectory dual ascent found no budget-feasible path",
                                  best=TrajectoryState(q, gamma, residual, b, obj, np.nan, False, it))
    state.points = best_q
    state.gamma = gamma
    state.objective = best_obj
    state.duality_gap = best_obj - best_dual
    state.converged = converged
    state.iterations = it
    state.used_incumbent = best_obj == inc_obj
    return state


def _scale_to_feasible(b, gamma, positions, start, radii, allowance, rounds: int = 60):
    """Sweep at ``t * gamma`` for the smallest feasible ``t`` found by doubling then bisection.

    Diminishing subgradient steps can stall just short of the price that
    makes a binding budget hold; this closes the last stretch.
    """
    def sweep(t):
        q = q_update(b, t * gamma, positions, start, radii)
        return q, bool(np.all(device_usage(q, b, positions) <= allowance))

    lo, hi, q_hi = 1.0, 2.0, None
    for _ in range(rounds):
        q, ok = sweep(hi)
        if ok:
            q_hi = q
            break
        lo, hi = hi, 2.0 * hi
    if q_hi is None:
        return None
    for _ in range(rounds):
        mid = 0.5 * (lo + hi)
        q, ok = sweep(mid)
        if ok:
            hi, q_hi = mid, q
        else:
            lo = mid
        if hi - lo <= 1e-9 * hi:
            break
    return q_hi


def movement_ok(points, delta, uav, atol: float = 1e-9) -> bool:
    steps = np.hypot(*np.diff(np.asarray(points, dtype=float), axis=0).T)
    return bool(np.all(steps <= slot_radii(delta, uav) + atol))


__all__ = [
    "TrajectoryState",
    "device_usage",
    "gamma_update",
    "movement_ok",
    "movement_times",
    "q_update",
    "residual_terms",
    "slot_radii",
    "solve_trajectory",
]
