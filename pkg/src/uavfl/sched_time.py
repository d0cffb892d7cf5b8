"""Joint device scheduling and upload-time allocation for a fixed trajectory.

The solver runs projected dual ascent on the partial Lagrangian, where every
primal block has a closed form: the upload time follows from the Lambert-W
minimiser of ``lam * energy + theta * tau``, the schedule is the sign of the
reduced cost ``g`` and the slot length equals the movement time. The binary
schedule read off the duals is then polished. For a fixed schedule the
remaining problem is convex and is solved exactly by alternating
per-device energy prices and per-slot time prices (``allocate_time``).
Cheap ratio-greedy re-selection and a short drop/swap local search finish
the job.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleError, NonConvergenceError
from .numerics import LambertDomainError, StepSchedule, bracketed_newton, one_plus_w, step
from .options import SolverOptions
from .problem import SchedProblem, constraint_residuals, max_violation, movement_times, phi, phi_excess

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12
THETA_FLOOR = 1e-12
_FLOOR_MARGIN = 1e-6
# log-price range of the exact allocation; hitting the lower end means slack
LOG_PRICE_BOUND = 60.0


@dataclass
class DualState:
    lam: np.ndarray
    mu: np.ndarray
    xi: float = 0.0

    @classmethod
    def initial(cls, K: int, N: int) -> "DualState":
        return cls(np.ones(K), np.full((K, N), 1.0 / K), 0.0)

    def copy(self) -> "DualState":
        return DualState(self.lam.copy(), self.mu.copy(), float(self.xi))

    def change(self, other: "DualState") -> float:
        return max(
            float(np.max(np.abs(self.lam - other.lam), initial=0.0)),
            float(np.max(np.abs(self.mu - other.mu), initial=0.0)),
            abs(self.xi - other.xi),
        )


@dataclass
class SubSolution:
    schedule: np.ndarray
    tau: np.ndarray
    delta: np.ndarray
    dual: DualState
    primal_objective: float
    dual_objective: float
    residuals: dict
    converged: bool
    iterations: int
    lambda_floored: bool = False
    trace: list = field(default_factory=list)


@dataclass
class Allocation:
    """Exact time allocation for a fixed schedule."""

    tau: np.ndarray
    delta: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    objective: float


# --- closed-form blocks ----------------------------------------------------


def tau_star(gain, lam, mu_sum, channel, scheduled=1):
    """Per-pair optimal upload time for energy price ``lam`` and slot price ``mu_sum``.

    Broadcasts over its array arguments. ``lam`` below ``LAMBDA_FLOOR`` is
    raised to it. A negative price is not a valid dual state and surfaces as
    a ``LambertDomainError``.
    """
    lam = np.maximum(np.asarray(lam, dtype=float), LAMBDA_FLOOR)
    mu_sum = np.asarray(mu_sum, dtype=float)
    y = np.asarray(gain, dtype=float) * mu_sum / (lam * channel.noise_power)
    if np.any(y < 0):
        raise LambertDomainError("negative multiplier in upload-time update")
    u = one_plus_w(np.minimum(y, 1e300))
    with np.errstate(divide="ignore"):
        tau = np.where(u > 0, channel.upload_scale / np.where(u > 0, u, 1.0), np.inf)
    out = np.where(np.asarray(scheduled) != 0, tau, 0.0)
    return float(out) if out.ndim == 0 else out


def scheduling_gain(prob: SchedProblem, dual: DualState) -> tuple[np.ndarray, np.ndarray]:
    """Reduced cost ``g`` of scheduling each pair, and the per-unit upload time."""
    lam = np.maximum(dual.lam, LAMBDA_FLOOR)[:, None]
    theta = np.maximum(dual.mu.sum(axis=0), THETA_FLOOR)[None, :]
    u = prob.efficiency(lam, theta)
    tau = prob.rho / u
    g = (
        lam * (prob.floor * phi(u) + prob.comp_energy[:, None])
        + tau * theta
        + dual.mu * prob.comp_time[:, None]
        - dual.xi * prob.weight[:, None]
    )
    return g, tau


def schedule_star(g) -> np.ndarray:
    """Schedule every pair with non-positive reduced cost (ties schedule)."""
    return (np.asarray(g) <= 0).astype(np.int8)


def delta_dual(trajectory, max_speed: float) -> np.ndarray:
    return movement_times(trajectory, max_speed)


def recover_delta(schedule, tau, trajectory, comp_time, max_speed: float) -> np.ndarray:
    """Shortest slot lengths compatible with movement, upload and computation."""
    a = np.asarray(schedule)
    comp = np.max(a * np.asarray(comp_time, dtype=float)[:, None], axis=0, initial=0.0)
    return np.maximum(movement_times(trajectory, max_speed), np.sum(tau, axis=0) + comp)


def dual_update(dual: DualState, energy_res, slot_res, accuracy_res, schedule: StepSchedule,
                iteration: int, scale=None) -> DualState:
    """Projected subgradient step on ``(lam, mu, xi)``.

    Residuals are constraint values (positive when violated). ``scale`` is an
    optional triple of per-family step multipliers (arrays broadcast) used as
    the dynamic part of the step size; without it the plain rule applies.
    """
    phi_t = step(schedule, iteration)
    s_lam, s_mu, s_xi = (1.0, 1.0, 1.0) if scale is None else scale
    lam = np.maximum(dual.lam + phi_t * s_lam * np.asarray(energy_res), 0.0)
    half = np.maximum(dual.mu + phi_t * s_mu * np.asarray(slot_res), 0.0)
    mu = half / np.maximum(1.0, half.sum(axis=0))
    xi = max(dual.xi + phi_t * s_xi * float(accuracy_res), 0.0)
    return DualState(lam, mu, xi)


def dual_objective(prob: SchedProblem, dual: DualState, g=None) -> float:
    """Value of the dual function (a lower bound on the completion time)."""
    if g is None:
        g, _ = scheduling_gain(prob, dual)
    theta = dual.mu.sum(axis=0)
    return float(
        np.sum((1.0 - theta) * prob.move)
        + np.minimum(g, 0.0).sum()
        - np.sum(dual.lam * prob.budget)
        + dual.xi * prob.C
    )


# --- exact allocation for a fixed schedule ---------------------------------


def _energy_terms(prob, lam, theta):
    """``y``, ``u``, energy above the floor and ``-dE/dlog(lam)`` for broadcast prices."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        y = prob.gains * theta / (lam * prob.noise)
    y = np.minimum(np.where(np.isnan(y), 0.0, y), 1e300)
    u = one_plus_w(y)
    excess = prob.floor * phi_excess(u)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        dlog = np.where(u > 0, prob.floor * y * (y * np.exp(-u)) / u ** 3, 0.0)
    return y, u, excess, np.nan_to_num(dlog)


def _expand(fun, x, direction, want_positive, mask, bound):
    """Step ``x`` along ``direction`` until ``fun(x) > 0`` (or ``< 0``) on ``mask``.

    Entries still failing at ``bound`` are returned there with a flag; the
    corresponding constraint is slack over the whole price range.
    """
    width = np.full_like(x, 2.0)
    x = np.clip(x, min(bound, -bound), max(bound, -bound))
    for _ in range(200):
        f = fun(x)
        bad = mask & ((f <= 0) if want_positive else (f >= 0))
        stuck = bad & (x == bound)
        if not (bad & ~stuck).any():
            return x, stuck
        x = np.where(bad & ~stuck, x + direction * width, x)
        x = np.maximum(x, bound) if direction < 0 else np.minimum(x, bound)
        width = np.where(bad, width * 1.5, width)
    raise NonConvergenceError("price bracket expansion failed")


def _solve_lam(prob, active, theta, room, log_lam0=None):
    """Per-device energy prices putting each active device exactly on budget."""
    K, _ = prob.shape
    rows = active.any(axis=1)
    x0 = np.zeros(K) if log_lam0 is None else np.where(np.isfinite(log_lam0), log_lam0, 0.0)

    # work with the energy above the floor on a log scale: nearly linear in log(lam)
    spare = np.where(rows, room - (active * prob.floor).sum(axis=1), 1.0)
    log_spare = np.log(np.maximum(spare, 1e-300))

    def f_only(x):
        _, _, e, _ = _energy_terms(prob, np.exp(x)[:, None], theta[None, :])
        with np.errstate(divide="ignore"):
            return np.where(rows, np.log((active * e).sum(axis=1)) - log_spare, -1.0)

    def fun(x):
        _, _, e, d = _energy_terms(prob, np.exp(x)[:, None], theta[None, :])
        tot = (active * e).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.log(tot) - log_spare
            df = -(active * d).sum(axis=1) / tot
        return np.where(rows, f, -1.0), np.where(rows, df, -1.0)

    x0 = np.clip(x0, -LOG_PRICE_BOUND + 1, LOG_PRICE_BOUND - 1)
    lo, slack = _expand(f_only, x0 - 1.0, -1.0, True, rows, -LOG_PRICE_BOUND)
    hi, _ = _expand(f_only, x0 + 1.0, 1.0, False, rows, LOG_PRICE_BOUND)
    solve = rows & ~slack
    # unsolved entries get a zero-width bracket so they never hold up convergence
    x, _, _ = bracketed_newton(fun, np.where(solve, lo, 0.0), np.where(solve, hi, 0.0), x0=np.where(solve, x0, 0.0),
                               ftol=4e-15)
    x = np.where(slack, -LOG_PRICE_BOUND, x)
    # nudge up to the budget-feasible side of the root
    safe, nudge = x.copy(), 1e-14
    for _ in range(60):
        over = solve & (f_only(safe) > 0)
        if not over.any():
            break
        safe = np.where(over, safe + nudge * (1.0 + np.abs(safe)), safe)
        nudge *= 4.0
    return x, safe


def _solve_theta(prob, active, log_lam, slot_room):
    """Per-slot time prices for slots where the movement time has spare room."""
    lam = np.exp(log_lam)[:, None]

    def tau_sum(x):
        _, u, _, _ = _energy_terms(prob, lam, np.exp(x)[None, :])
        with np.errstate(divide="ignore"):
            return (active * np.where(u > 0, prob.rho / np.where(u > 0, u, 1.0), np.inf)).sum(axis=0)

    N = prob.shape[1]
    cols = active.any(axis=0) & (slot_room > 0)
    full = tau_sum(np.zeros(N))
    free = cols & (full < slot_room)
    x = np.zeros(N)
    if not free.any():
        return x
    rho = prob.rho

    log_room = np.log(np.where(free, slot_room, 1.0))

    def f_only(z):
        with np.errstate(divide="ignore"):
            return np.where(free, np.log(tau_sum(z)) - log_room, -1.0)

    def fun(z):
        y, u, _, _ = _energy_terms(prob, lam, np.exp(z)[None, :])
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = np.where(u > 0, rho / np.where(u > 0, u, 1.0), np.inf)
            dt = np.where(u > 0, -rho * y * np.exp(-u) / np.where(u > 0, u, 1.0) ** 3, 0.0)
            tot = (active * t).sum(axis=0)
            f = np.log(tot) - log_room
            df = (active * np.nan_to_num(dt)).sum(axis=0) / tot
        return np.where(free, f, -1.0), np.where(free, df, -1.0)

    lo, slack = _expand(f_only, np.full(N, -1.0), -1.0, True, free, -LOG_PRICE_BOUND)
    solve = free & ~slack
    z, _, _ = bracketed_newton(fun, np.where(solve, lo, 0.0), np.zeros(N), x0=np.where(solve, 0.5 * lo, 0.0),
                               ftol=4e-15)
    z = np.where(slack, -LOG_PRICE_BOUND, z)
    return np.where(free, np.minimum(z, 0.0), 0.0)


def energy_floor(prob: SchedProblem, schedule) -> np.ndarray:
    """Per-device energy needed by ``schedule`` with unbounded upload times."""
    a = np.asarray(schedule, dtype=bool)
    return (a * prob.floor).sum(axis=1) + a.sum(axis=1) * prob.comp_energy


def _newton_prices(prob, a, room, slot_room, log_lam, max_iter=50, rtol=1e-13):
    """Newton on the device prices with the slot prices eliminated.

    For given ``lam`` every slot with spare time gets the price that exactly
    fills it; the Jacobian of the log energy residual then follows from
    implicit differentiation. Alternating the two price families instead
    crawls when busy and spare slots mix, because a common rescaling of
    ``lam`` and the spare-slot prices is nearly free.
    """
    rows = a.any(axis=1)
    spare = np.where(rows, room - (a * prob.floor).sum(axis=1), 1.0)
    log_spare = np.log(np.maximum(spare, 1e-300))

    def residual(x):
        z = _solve_theta(prob, a, x, slot_room)
        y, u, excess, dE = _energy_terms(prob, np.exp(x)[:, None], np.exp(z)[None, :])
        tot = (a * excess).sum(axis=1)
        with np.errstate(divide="ignore"):
            r = np.where(rows, np.log(tot) - log_spare, 0.0)
        return r, z, (y, u, tot, dE)

    x = np.where(rows, log_lam, 0.0)
    r, z, aux = residual(x)
    for _ in range(max_iter):
        norm = np.max(np.abs(r))
        if not np.isfinite(norm):
            return x, z, False
        if norm <= rtol:
            return x, z, True
        y, u, tot, dE = aux
        E = a * dE
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            Dt = np.where(a & (u > 0), y * np.exp(-u) / u ** 3, 0.0)
        free = (z < 0) & (z > -LOG_PRICE_BOUND)
        Wt = np.nan_to_num(Dt) * free[None, :]
        cs = Wt.sum(axis=0)
        P = np.where(cs > 0, Wt / np.where(cs > 0, cs, 1.0), 0.0)
        J = E @ P.T - np.diag(E.sum(axis=1))
        idx = np.flatnonzero(rows)
        Jr = J[np.ix_(idx, idx)] / tot[idx, None]
        step = np.linalg.lstsq(Jr, -r[idx], rcond=None)[0]
        step = step * min(1.0, 5.0 / max(np.max(np.abs(step)), 1e-300))
        t = 1.0
        for _ in range(20):
            xt = x.copy()
            xt[idx] += t * step
            rt, zt, auxt = residual(xt)
            if np.max(np.abs(rt)) < (1.0 - 1e-4 * t) * norm:
                break
            t *= 0.5
        else:
            return x, z, False
        if t * np.max(np.abs(step)) < 1e-15:
            return xt, zt, True
        if t < 1e-3:
            # singular direction with no root along it: stalled
            return xt, zt, False
        x, r, z, aux = xt, rt, zt, auxt
    return x, z, np.max(np.abs(r)) <= 1e-9


def allocate_time(prob: SchedProblem, schedule, max_rounds: int = 200, tol: float = 1e-12,
                  theta0=None) -> Allocation:
    """Minimum completion time for a fixed binary schedule.

    Prices come from a Newton solve; should it stall, alternating exact
    solves of the two price families take over. ``theta0`` warm-starts the
    slot prices (e.g. from a neighbouring schedule). Raises
    ``InfeasibleError`` when some device cannot afford its uploads even with
    unbounded durations.
    """
    a = np.asarray(schedule).astype(bool)
    K, N = prob.shape
    need = energy_floor(prob, a)
    short = np.flatnonzero(a.any(axis=1) & (need >= prob.budget))
    if short.size:
        raise InfeasibleError(f"energy floor exceeds budget for devices {short.tolist()}",
                              violations={"devices": short.tolist()})
    room = prob.budget - a.sum(axis=1) * prob.comp_energy
    comp = prob.comp_round_time(a)
    slot_room = prob.move - comp
    log_theta = np.zeros(N) if theta0 is None else np.log(np.clip(theta0, THETA_FLOOR, 1.0))

    def evaluate(log_theta, log_lam=None):
        theta = np.exp(log_theta)
        log_lam, log_lam_safe = _solve_lam(prob, a, theta, room, log_lam)
        lam = np.where(a.any(axis=1), np.exp(log_lam_safe), 0.0)
        u = prob.efficiency(np.where(lam > 0, lam, 1.0)[:, None], theta[None, :])
        tau = np.where(a, prob.rho / np.where(u > 0, u, 1.0), 0.0)
        delta = np.maximum(prob.move, tau.sum(axis=0) + comp)
        return log_lam, Allocation(tau, delta, lam, theta, float(delta.sum()))

    log_lam, best = evaluate(log_theta)
    if not a.any():
        return best
    x, z, ok = _newton_prices(prob, a, room, slot_room, log_lam)
    if np.all(np.isfinite(x)):
        log_lam, cand = evaluate(z, x)
        if cand.objective < best.objective:
            best = cand
        log_theta = z
    # every slot limited by movement or computation: nothing left to gain
    if ok or best.objective <= np.maximum(prob.move, comp).sum() * (1 + tol):
        return best
    prev = best.objective
    for _ in range(max_rounds):
        log_theta = _solve_theta(prob, a, log_lam, slot_room)
        log_lam, cand = evaluate(log_theta, log_lam)
        if cand.objective < best.objective:
            best = cand
        # only price ratios matter in slots with spare time, so the prices
        # themselves may drift; the objective settles regardless
        if abs(prev - cand.objective) <= tol * cand.objective:
            break
        prev = cand.objective
    return best


# --- primal recovery -------------------------------------------------------


def pair_costs(prob: SchedProblem, schedule, lam, theta) -> np.ndarray:
    """Estimated completion-time cost of each pair under prices ``lam``, ``theta``.

    For pairs in a slot that is already busy the cost is the Lagrangian price
    of the upload plus any extension of the computation phase. In an idle
    slot the first device may use the movement time for free.
    """
    a = np.asarray(schedule).astype(bool)
    lam = np.asarray(lam, dtype=float)[:, None]
    theta = np.asarray(theta, dtype=float)[None, :]
    u = prob.efficiency(lam, theta)
    tau = prob.rho / u
    comp = prob.comp_round_time(a)[None, :]
    tk = prob.comp_time[:, None]
    ec = prob.comp_energy[:, None]
    busy = a.any(axis=0)[None, :]
    cost_busy = lam * (prob.floor * phi(u) + ec) + theta * tau + theta * np.maximum(tk - comp, 0.0)
    # idle slot: price the time beyond the movement window at 1
    u1 = prob.efficiency(lam, 1.0)
    tau1 = prob.rho / u1
    room = prob.move[None, :] - tk
    spill = tau1 >= room
    with np.errstate(divide="ignore", over="ignore"):
        u_room = prob.rho / np.where(room > 0, room, 1.0)
    cost_idle = np.where(
        spill,
        lam * (prob.floor * phi(u1) + ec) + tau1 - room,
        lam * (prob.floor * phi(u_room) + ec),
    )
    return np.where(busy, cost_busy, cost_idle)


def _ratio_cover(prob, costs, base=None):
    """Cheapest-per-unit-weight set of pairs reaching the accuracy constant."""
    K, N = prob.shape
    A = np.zeros((K, N), dtype=bool)
    if prob.C <= 0:
        return A
    w = np.broadcast_to(prob.weight[:, None], (K, N)).ravel()
    ratio = costs.ravel() / w
    order = np.argsort(ratio, kind="stable")
    cum = np.cumsum(w[order])
    take = int(np.searchsorted(cum, prob.C * (1 + 1e-12), side="left")) + 1
    A.ravel()[order[:take]] = True
    return A


def repair_schedule(prob: SchedProblem, schedule, costs) -> np.ndarray:
    """Drop pairs from devices over their energy floor, then restore accuracy."""
    A = np.asarray(schedule).astype(bool).copy()
    K, N = prob.shape
    cap = prob.budget * (1.0 - _FLOOR_MARGIN)
    pair_floor = prob.floor + prob.comp_energy[:, None]
    for k in range(K):
        used = float(pair_floor[k, A[k]].sum())
        if used < cap[k]:
            continue
        for n in np.argsort(-np.where(A[k], pair_floor[k], -np.inf), kind="stable"):
            if used < cap[k] or not A[k, n]:
                break
            A[k, n] = False
            used -= pair_floor[k, n]
    deficit = prob.C - prob.coverage(A)
    if deficit <= 0:
        return A
    used = (A * pair_floor).sum(axis=1)
    ratio = np.where(A, np.inf, costs / prob.weight[:, None]).ravel()
    for idx in np.argsort(ratio, kind="stable"):
        if deficit <= 0 or not np.isfinite(ratio[idx]):
            break
        k, n = divmod(int(idx), N)
        if used[k] + pair_floor[k, n] >= cap[k]:
            continue
        A[k, n] = True
        used[k] += pair_floor[k, n]
        deficit -= prob.weight[k]
    if deficit > 0:
        raise InfeasibleError("accuracy constraint cannot be met within the energy budgets",
                              violations={"accuracy_deficit": float(deficit)})
    return A


def _reference_prices(prob: SchedProblem) -> np.ndarray:
    """Energy price of each device when it uploads in its share of slots."""
    K, N = prob.shape
    share = 1.0 if prob.C <= 0 else min(max(prob.C / (N * prob.weight.sum()), 1.0 / N), 1.0)
    active = np.ones((K, N), dtype=bool)
    room = prob.budget / share - N * prob.comp_energy
    ok = room > prob.floor.sum(axis=1) * (1 + 1e-9)
    lam = np.ones(K)
    if ok.any():
        x, hi = _solve_lam(prob, active & ok[:, None], np.ones(N), np.where(ok, room, 1.0))
        lam = np.where(ok, np.exp(hi), 1.0)
    return lam


class _Evaluator:
    """Caches exact allocations of schedules already tried."""

    def __init__(self, prob):
        self.prob = prob
        self.cache = {}
        self.calls = 0
        self.warm = None  # slot prices of the current incumbent

    def __call__(self, A):
        key = np.packbits(A).tobytes()
        if key not in self.cache:
            self.calls += 1
            try:
                self.cache[key] = allocate_time(self.prob, A, theta0=self.warm)
            except InfeasibleError:
                self.cache[key] = None
        return self.cache[key]


def _fallback_prices(alloc, lam_ref):
    return np.where(alloc.lam > 0, alloc.lam, lam_ref)


def _greedy_fill(order, w, room):
    """Walk ``order`` taking every pair whose weight still fits in ``room``."""
    out = []
    for i in order:
        if w[i] <= room:
            out.append(int(i))
            room -= w[i]
    return out


def _refill(order, w, need):
    """Prefix of ``order`` whose weight reaches ``need``, or None."""
    got = np.cumsum(w[order])
    k = int(np.searchsorted(got, need))
    return None if k >= order.size else [int(i) for i in order[: k + 1]]


def _local_search(prob, A, alloc, evaluate, lam_ref, budget):
    """First-improvement moves ranked by estimated saving.

    Moves: drop one pair; swap one pair for another; add one pair and drop
    the scheduled pairs it makes redundant; drop one pair and refill the
    coverage with the cheapest pairs per unit weight; exchange the slots of
    two scheduled pairs of different devices.
    """
    K, N = prob.shape
    w = np.broadcast_to(prob.weight[:, None], (K, N)).ravel()
    spent = 0
    while spent < budget:
        costs = pair_costs(prob, A, _fallback_prices(alloc, lam_ref), alloc.theta).ravel()
        flat = A.ravel()
        slack = prob.coverage(A) - prob.C
        on = np.flatnonzero(flat)
        off = np.flatnonzero(~flat)
        on_by_cost = on[np.argsort(-costs[on], kind="stable")]
        on_by_ratio = on[np.argsort(-costs[on] / w[on], kind="stable")]
        moves = {}

        def add(outs, ins):
            key = (tuple(sorted(outs)), tuple(sorted(ins)))
            if key not in moves:
                moves[key] = costs[list(ins)].sum() - costs[list(outs)].sum()

        for i in on:
            if w[i] <= slack:
                add([i], [])
        if off.size:
            off_sorted = off[np.argsort(costs[off], kind="stable")]
            off_by_ratio = off[np.argsort(costs[off] / w[off], kind="stable")]
            for i in on_by_cost[: 2 * budget]:
                for j in off_sorted[w[off_sorted] >= w[i] - slack][:3]:
                    add([i], [j])
                ins = _refill(off_by_ratio, w, w[i] - slack)
                if ins is not None and len(ins) > 1:
                    add([i], ins)
            top = on_by_cost[:budget]
            for a, i in enumerate(top):
                ki, ni = divmod(int(i), N)
                for j in top[a + 1:]:
                    kj, nj = divmod(int(j), N)
                    if ki != kj and ni != nj and not flat[ki * N + nj] and not flat[kj * N + ni]:
                        add([i, j], [ki * N + nj, kj * N + ni])
            for j in off_sorted[: 2 * budget]:
                for order in (on_by_cost, on_by_ratio):
                    outs = _greedy_fill(order, w, slack + w[j])
                    if len(outs) > 1:
                        add(outs, [j])
        evaluate.warm = alloc.theta
        improved = False
        for outs, ins in sorted(moves, key=moves.get):
            if spent >= budget:
                break
            B = A.copy()
            B.ravel()[list(outs)] = False
            B.ravel()[list(ins)] = True
            cand = evaluate(B)
            spent += 1
            if cand is not None and cand.objective < alloc.objective * (1 - 1e-12):
                A, alloc, improved = B, cand, True
                break
        if not improved:
            break
    return A, alloc


def _polish(prob, candidates, opts, lam_ref, evaluate):
    """Exact allocation, ratio-greedy re-selection and local search."""
    best_A, best = None, None
    proxy = pair_costs(prob, np.zeros(prob.shape, dtype=bool), lam_ref, np.ones(prob.shape[1]))
    for A in candidates:
        try:
            A = repair_schedule(prob, A, proxy)
        except InfeasibleError:
            continue
        alloc = evaluate(A)
        if alloc is not None and (best is None or alloc.objective < best.objective):
            best_A, best = A, alloc
    if best is None:
        A = repair_schedule(prob, _ratio_cover(prob, proxy), proxy)
        best_A, best = A, evaluate(A)
        if best is None:
            raise InfeasibleError("no energy-feasible schedule found")
    for _ in range(opts.refine_rounds):
        costs = pair_costs(prob, best_A, _fallback_prices(best, lam_ref), best.theta)
        try:
            A = repair_schedule(prob, _ratio_cover(prob, costs), costs)
        except InfeasibleError:
            break
        alloc = evaluate(A)
        if alloc is None or alloc.objective >= best.objective * (1 - 1e-12):
            break
        best_A, best = A, alloc
    return _local_search(prob, best_A, best, evaluate, lam_ref, opts.local_moves)


# --- driver ----------------------------------------------------------------


def _preconditioner(prob, dual, lam_ref, tau_unit, energy_res, slot_res, acc_res):
    """Per-family step multipliers making one unit step a relative change."""
    K, N = prob.shape
    s_lam = np.maximum(dual.lam, lam_ref) / np.maximum(np.abs(energy_res), prob.budget)
    slot_ref = np.maximum(np.abs(slot_res), np.maximum(prob.move, np.median(tau_unit, axis=0)))
    s_mu = 1.0 / (K * np.maximum(slot_ref, 1e-12))
    cov_ref = max(abs(acc_res), N * prob.weight.sum() / K)
    xi_ref = float(np.median(lam_ref * prob.floor.mean(axis=1)) + prob.rho / 10) / prob.weight.mean()
    s_xi = max(dual.xi, xi_ref) / cov_ref
    return s_lam, s_mu, s_xi


def _finish(scenario, trajectory, prob, A, alloc, dual, best_dual, converged, it, floored, trace):
    A = A.astype(np.int8)
    tau = np.where(A == 1, alloc.tau, 0.0)
    res = constraint_residuals(scenario, A, tau, alloc.delta, trajectory)
    return SubSolution(
        schedule=A,
        tau=tau,
        delta=alloc.delta,
        dual=dual,
        primal_objective=float(alloc.delta.sum()),
        dual_objective=best_dual,
        residuals=res,
        converged=converged,
        iterations=it,
        lambda_floored=floored,
        trace=trace,
    )


def solve_sched_time(scenario, trajectory, opts: SolverOptions | None = None, warm: DualState | None = None,
                     incumbent=None, fixed_schedule=None) -> SubSolution:
    """Minimise the completion time over schedule and upload times.

    ``warm`` seeds the duals and ``incumbent`` (a schedule) is always kept as
    a candidate, so the returned objective never exceeds the incumbent's
    exact allocation on this trajectory. ``fixed_schedule`` skips the
    scheduling decision and only allocates time.
    """
    opts = opts or scenario.options
    prob = SchedProblem.build(scenario, trajectory)
    K, N = prob.shape
    trace: list[dict] = []
    if fixed_schedule is not None:
        A = np.asarray(fixed_schedule).astype(bool)
        if A.shape != (K, N):
            raise ValueError(f"schedule must be {(K, N)}")
        if prob.coverage(A) < prob.C * (1 - opts.feas_tol):
            raise InfeasibleError("fixed schedule misses the accuracy constant")
        alloc = allocate_time(prob, A)
        dual = DualState(alloc.lam, np.zeros((K, N)), 0.0)
        return _finish(scenario, trajectory, prob, A, alloc, dual, -np.inf, True, 0, False, trace)
    if prob.C <= 0:
        # nothing needs scheduling and no slot can be shorter than its movement
        A = np.zeros((K, N), dtype=bool)
        alloc = Allocation(np.zeros((K, N)), prob.move.copy(), np.zeros(K), np.ones(N), float(prob.move.sum()))
        dual = DualState.initial(K, N) if warm is None else warm.copy()
        return _finish(scenario, trajectory, prob, A, alloc, dual, dual_objective(prob, dual), True, 0, False, trace)

    lam_ref = _reference_prices(prob)
    sched = StepSchedule(opts.dual_step, opts.step_mode)
    dual = DualState.initial(K, N) if warm is None else warm.copy()
    best_dual, best_primal, best_A = -np.inf, np.inf, None
    ref_dual, ref_primal = -np.inf, np.inf
    stall, converged, floored, it = 0, False, False, 0
    scale = N * prob.weight.sum()
    for it in range(1, opts.max_iters + 1):
        floored |= bool(np.any(dual.lam < LAMBDA_FLOOR))
        g, tau_unit = scheduling_gain(prob, dual)
        A = schedule_star(g).astype(bool)
        tau = np.where(A, tau_unit, 0.0)
        dval = dual_objective(prob, dual, g)
        energy_res = prob.device_energy(A, tau) - prob.budget
        comp = prob.comp_time[:, None] * A
        slot_res = tau.sum(axis=0)[None, :] + comp - prob.move[None, :]
        acc_res = prob.C - prob.coverage(A)
        delta = prob.slot_durations(A, tau)
        primal = float(delta.sum())
        feasible = bool(np.all(energy_res <= opts.feas_tol * prob.budget) and acc_res <= opts.feas_tol * scale)
        best_dual = max(best_dual, dval)
        if feasible and primal < best_primal:
            best_primal, best_A = primal, A.copy()
        # patience counts iterations without a 1e-4 relative gain on either bound
        if best_dual > ref_dual + 1e-4 * abs(best_dual) or best_primal < ref_primal * (1 - 1e-4):
            ref_dual, ref_primal, stall = best_dual, best_primal, 0
        else:
            stall += 1
        if opts.trace:
            trace.append({
                "iteration": it,
                "dual_objective": dval,
                "primal_objective": primal,
                "energy_violation": float(np.max(energy_res / prob.budget)),
                "slot_violation": float(np.max(slot_res)),
                "accuracy_residual": float(acc_res / scale),
            })
        s = _preconditioner(prob, dual, lam_ref, tau_unit, energy_res, slot_res, acc_res)
        new = dual_update(dual, energy_res, slot_res, acc_res, sched, it, s)
        change = new.change(dual)
        dual = new
        if change < opts.tol:
            converged = True
            break
        if stall >= opts.patience or (np.isfinite(best_primal) and best_primal - best_dual <= opts.gap_tol * best_primal):
            break

    g, _ = scheduling_gain(prob, dual)
    candidates = [schedule_star(g).astype(bool)]
    if best_A is not None:
        candidates.append(best_A)
    if incumbent is not None:
        candidates.append(np.asarray(incumbent).astype(bool))
    evaluate = _Evaluator(prob)
    try:
        A, alloc = _polish(prob, candidates, opts, lam_ref, evaluate)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"primal recovery failed: {exc}", best=dual) from exc
    if incumbent is not None:
        inc = evaluate(np.asarray(incumbent).astype(bool))
        if inc is not None and inc.objective < alloc.objective:
            A, alloc = np.asarray(incumbent).astype(bool), inc
    sol = _finish(scenario, trajectory, prob, A, alloc, dual, best_dual, converged, it, floored, trace)
    viol = max_violation(sol.residuals)
    if viol > opts.feas_tol:
        raise NonConvergenceError(f"recovered point violates constraints by {viol:.3g}", best=sol)
    log.debug("sched/time: T=%.6g dual=%.6g iters=%d evals=%d", sol.primal_objective, best_dual, it,
              evaluate.calls)
    return sol


def write_trace(trace: list[dict], path) -> Path:
    path = Path(path)
    fields = ["iteration", "dual_objective", "primal_objective", "energy_violation", "slot_violation",
              "accuracy_residual"]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(trace)
    return path
