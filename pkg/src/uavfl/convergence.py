"""Convergence bound of scheduled FL and the feasibility gate built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import LN2, DeviceSpec, FlSpec

ACCURACY_UNREACHABLE = "accuracy unreachable"
ENERGY_SHORTFALL = "energy budget below upload floor"


def initial_gap_term(fl: FlSpec) -> float:
    """``2 (F(w0) - F*) / (N eta)``, the bound under full participation."""
    return 2.0 * (fl.initial_loss - fl.loss_floor) / (fl.rounds * fl.learn_rate)


def convergence_bound(fl: FlSpec, devices: Sequence[DeviceSpec], schedule) -> float:
    """Upper bound on the average squared global gradient norm.

    ``schedule`` is ``K x N``; column ``n`` holds the participation of round
    ``n + 1``, which is the round that moves ``w_n`` to ``w_{n+1}``.
    """
    a = np.asarray(schedule, dtype=float)
    sizes = np.array([d.dataset_size for d in devices], dtype=float)
    if a.shape[0] != sizes.size:
        raise ValueError("schedule must have one row per device")
    K, N = a.shape
    D = sizes.sum()
    missed = float(((1.0 - a) * sizes[:, None] ** 2).sum())
    first = 2.0 * (fl.initial_loss - fl.loss_floor) / (N * fl.learn_rate)
    return float(first + 4.0 * K * fl.grad_bound / (N * D ** 2) * missed)


def accuracy_constant_C(fl: FlSpec, devices: Sequence[DeviceSpec]) -> float:
    """Right-hand side of the scheduling constraint ``sum a_k[n] D_k^2 >= C``."""
    sizes = np.array([d.dataset_size for d in devices], dtype=float)
    K, N, D = sizes.size, fl.rounds, sizes.sum()
    slack = fl.accuracy_target - initial_gap_term(fl)
    return float(N * (sizes ** 2).sum() - slack * N * D ** 2 / (4.0 * K * fl.grad_bound))


@dataclass
class FeasibilityReport:
    min_rounds: int
    required_scheduled: int
    energy_floor: float
    feasible: bool
    reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "min_rounds": self.min_rounds,
            "required_scheduled": self.required_scheduled,
            "energy_floor": self.energy_floor,
            "feasible": self.feasible,
            "reasons": list(self.reasons),
        }


def check_feasibility(scenario) -> FeasibilityReport:
    """Necessary-and-sufficient round count and energy conditions."""
    fl, ch, uav = scenario.fl, scenario.channel, scenario.uav
    sizes = np.array([d.dataset_size for d in scenario.devices], dtype=float)
    K, N, D = sizes.size, fl.rounds, sizes.sum()
    gap = fl.initial_loss - fl.loss_floor
    min_rounds = math.ceil(2.0 * gap / (fl.accuracy_target * fl.learn_rate)) if gap > 0 else 0
    slack = fl.accuracy_target - initial_gap_term(fl)
    raw = K * N - slack * N * D ** 2 / (4.0 * fl.grad_bound * K * sizes.max() ** 2)
    required = int(min(max(math.ceil(raw), 0), K * N))
    floor = required * ch.noise_power * ch.model_bits * uav.altitude ** 2 * LN2 / (ch.ref_gain * ch.bandwidth)
    reasons = []
    if N < min_rounds:
        reasons.append(ACCURACY_UNREACHABLE)
    total_budget = sum(d.energy_budget for d in scenario.devices)
    if total_budget < floor:
        reasons.append(ENERGY_SHORTFALL)
    return FeasibilityReport(min_rounds, required, floor, not reasons, reasons)
