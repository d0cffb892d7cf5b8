"""Per-trajectory problem data and the closed-form upload trade-off.

For a scheduled pair ``(k, n)`` the upload energy as a function of its
duration is ``e0 * expm1(u) / u`` with ``u = s ln2 / (B tau)`` and
``e0 = s sigma^2 ln2 / (B h)`` the infinite-duration floor. The minimiser of
``lam * energy + theta * tau`` has ``u = 1 + W((y - 1)/e)`` where
``y = h theta / (lam sigma^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import channel_gains
from .numerics import one_plus_w


def movement_times(trajectory: np.ndarray, max_speed: float) -> np.ndarray:
    """Minimum duration of each slot implied by the UAV displacement."""
    steps = np.diff(np.asarray(trajectory, dtype=float), axis=0)
    return np.hypot(steps[:, 0], steps[:, 1]) / max_speed


def phi(u: np.ndarray) -> np.ndarray:
    """``expm1(u) / u`` with the limit 1 at zero."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(u > 1e-300, np.expm1(u) / np.where(u > 1e-300, u, 1.0), 1.0)


def phi_excess(u: np.ndarray) -> np.ndarray:
    """``phi(u) - 1`` without cancellation near zero."""
    u = np.asarray(u, dtype=float)
    small = u < 1e-3
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        big = (np.expm1(u) - u) / np.where(small, 1.0, u)
    return np.where(small, u * (0.5 + u * (1.0 / 6.0 + u / 24.0)), big)


@dataclass
class SchedProblem:
    """Arrays of the scheduling/time-allocation subproblem for a fixed trajectory."""

    gains: np.ndarray  # K x N
    floor: np.ndarray  # K x N, e0
    move: np.ndarray  # N
    comp_time: np.ndarray  # K
    comp_energy: np.ndarray  # K
    budget: np.ndarray  # K
    weight: np.ndarray  # K, D_k^2
    C: float
    rho: float
    noise: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.gains.shape

    @classmethod
    def build(cls, scenario, trajectory) -> "SchedProblem":
        arr = scenario.arrays
        ch, uav = scenario.channel, scenario.uav
        traj = np.asarray(trajectory, dtype=float)
        if traj.shape != (scenario.N + 1, 2):
            raise ValueError(f"trajectory must be {(scenario.N + 1, 2)}, got {traj.shape}")
        gains = channel_gains(traj[1:], arr.positions, uav.altitude, ch.ref_gain)
        rho = ch.upload_scale
        return cls(
            gains=gains,
            floor=ch.noise_power * rho / gains,
            move=movement_times(traj, uav.max_speed),
            comp_time=arr.comp_time,
            comp_energy=arr.comp_energy,
            budget=arr.budget,
            weight=arr.sq_sizes,
            C=arr.accuracy_C,
            rho=rho,
            noise=ch.noise_power,
        )

    def efficiency(self, lam, theta) -> np.ndarray:
        """Optimal spectral efficiency ``u`` (nats) for prices ``lam``, ``theta``."""
        with np.errstate(divide="ignore"):
            y = self.gains * theta / (lam * self.noise)
        return one_plus_w(np.where(np.isfinite(y), y, 1e300))

    def energy_of_u(self, u) -> np.ndarray:
        return self.floor * phi(u)

    def upload_energy(self, schedule, tau) -> np.ndarray:
        """Per-pair upload energy for durations ``tau`` (zero where idle)."""
        a = np.asarray(schedule, dtype=bool)
        t = np.where(a, tau, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            u = self.rho / t
        return np.where(a, self.floor * phi(u), 0.0)

    def comp_round_time(self, schedule) -> np.ndarray:
        return np.max(np.asarray(schedule) * self.comp_time[:, None], axis=0, initial=0.0)

    def slot_durations(self, schedule, tau) -> np.ndarray:
        return np.maximum(self.move, np.sum(tau, axis=0) + self.comp_round_time(schedule))

    def device_energy(self, schedule, tau) -> np.ndarray:
        a = np.asarray(schedule, dtype=bool)
        return self.upload_energy(a, tau).sum(axis=1) + a.sum(axis=1) * self.comp_energy

    def coverage(self, schedule) -> float:
        return float((np.asarray(schedule) * self.weight[:, None]).sum())


def constraint_residuals(scenario, schedule, tau, delta, trajectory) -> dict:
    """Signed residuals of every constraint family (positive means violated).

    ``energy`` and ``accuracy`` are relative to the budget and to
    ``N * sum D_k^2``; slot and movement residuals are in seconds and metres.
    """
    prob = SchedProblem.build(scenario, trajectory)
    a = np.asarray(schedule)
    tau = np.asarray(tau, dtype=float)
    delta = np.asarray(delta, dtype=float)
    traj = np.asarray(trajectory, dtype=float)
    uav = scenario.uav
    used = prob.device_energy(a, tau)
    steps = np.hypot(*np.diff(traj, axis=0).T)
    radius = np.minimum(uav.max_speed * delta, uav.max_step)
    scale = scenario.N * prob.weight.sum()
    return {
        "energy": (used - prob.budget) / prob.budget,
        "slot": np.sum(tau, axis=0) + prob.comp_round_time(a) - delta,
        "movement": steps - radius,
        "accuracy": (prob.C - prob.coverage(a)) / scale,
        "start": float(np.hypot(*(traj[0] - np.asarray(uav.initial_position)))),
        "binary": bool(np.all((a == 0) | (a == 1))),
        "tau_support": bool(np.all((tau > 0) == (a == 1))),
    }


def max_violation(res: dict) -> float:
    return max(
        float(np.max(res["energy"], initial=0.0)),
        float(np.max(res["slot"], initial=0.0)),
        float(np.max(res["movement"], initial=0.0)),
        max(float(res["accuracy"]), 0.0),
        res["start"],
    )
