"""Physical and cost models: LoS channel, computation and upload energy/time.

All quantities are linear SI units (watts, joules, seconds, hertz, metres).
Functions accept numpy arrays wherever a scalar is shown, and broadcast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LN2 = math.log(2.0)


@dataclass(frozen=True)
class DeviceSpec:
    position: tuple[float, float]
    dataset_size: int
    cycles_per_sample: float
    cpu_freq: float
    capacitance_coeff: float
    energy_budget: float

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be >= 1")
        if not self.cpu_freq > 0:
            raise ValueError("cpu_freq must be positive")
        if not self.energy_budget > 0:
            raise ValueError("energy_budget must be positive")
        if not self.capacitance_coeff > 0:
            raise ValueError("capacitance_coeff must be positive")


@dataclass(frozen=True)
class UavSpec:
    altitude: float
    initial_position: tuple[float, float]
    max_speed: float
    max_step: float
    cpu_freq: float
    cycles_per_model: float
    tx_power: float

    def __post_init__(self):
        q = self.initial_position
        object.__setattr__(self, "initial_position", (float(q[0]), float(q[1])))
        if not self.altitude > 0:
            raise ValueError("altitude must be positive")
        if not self.max_speed > 0:
            raise ValueError("max_speed must be positive")
        if not 0 <= self.max_step < self.altitude:
            raise ValueError("max_step must lie in [0, altitude)")


@dataclass(frozen=True)
class ChannelSpec:
    ref_gain: float
    bandwidth: float
    noise_power: float
    model_bits: float

    def __post_init__(self):
        for name in ("ref_gain", "bandwidth", "noise_power", "model_bits"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def upload_scale(self) -> float:
        """``s ln2 / B``: upload time at unit spectral efficiency (nats)."""
        return self.model_bits * LN2 / self.bandwidth


@dataclass(frozen=True)
class FlSpec:
    rounds: int
    learn_rate: float
    accuracy_target: float
    grad_bound: float
    initial_loss: float
    loss_floor: float = 0.0

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.learn_rate > 0:
            raise ValueError("learn_rate must be positive")
        if not self.accuracy_target > 0:
            raise ValueError("accuracy_target must be positive")
        if not self.grad_bound > 0:
            raise ValueError("grad_bound must be positive")
        if self.initial_loss < self.loss_floor:
            raise ValueError("initial_loss must be >= loss_floor")


def channel_gain(uav_xy, device: DeviceSpec, uav: UavSpec, ch: ChannelSpec):
    """Free-space LoS power gain between the UAV at ``uav_xy`` and a device."""
    d = np.asarray(uav_xy, dtype=float) - np.asarray(device.position)
    return ch.ref_gain / (uav.altitude ** 2 + np.sum(d * d, axis=-1))


def channel_gains(points: np.ndarray, positions: np.ndarray, altitude: float, ref_gain: float) -> np.ndarray:
    """Gain matrix ``K x N`` for UAV waypoints ``points`` (N x 2)."""
    diff = points[None, :, :] - positions[:, None, :]
    return ref_gain / (altitude ** 2 + np.einsum("knj,knj->kn", diff, diff))


def comp_time(device: DeviceSpec) -> float:
    return device.cycles_per_sample * device.dataset_size / device.cpu_freq


def comp_energy(device: DeviceSpec, scheduled=1):
    """CPU energy of one local round; zero when not scheduled."""
    per_round = 0.5 * device.capacitance_coeff * device.cycles_per_sample * device.dataset_size * device.cpu_freq ** 2
    return np.asarray(scheduled) * per_round if np.ndim(scheduled) else float(scheduled) * per_round


def round_comp_time(schedule_col: Sequence[int], devices: Sequence[DeviceSpec]) -> float:
    """Synchronous computation phase: slowest scheduled device, 0 if none."""
    times = [a * comp_time(dev) for a, dev in zip(schedule_col, devices)]
    return max(times, default=0.0) if any(schedule_col) else 0.0


def comm_energy(tau, scheduled, gain, ch: ChannelSpec):
    """Energy to push ``scheduled * s`` bits within ``tau`` seconds.

    Continuous extension: zero at ``tau == 0``. Negative ``tau`` is rejected.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("tau must be non-negative")
    a = np.asarray(scheduled, dtype=float)
    gain = np.asarray(gain, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        expo = a * ch.model_bits * LN2 / (ch.bandwidth * tau)
        e = tau * ch.noise_power / gain * np.expm1(expo)
    e = np.where((tau == 0) | (a == 0), 0.0, e)
    return float(e) if e.ndim == 0 else e


def comm_energy_floor(scheduled, gain, ch: ChannelSpec):
    """Infimum of :func:`comm_energy` as ``tau`` grows without bound."""
    return np.asarray(scheduled) * ch.model_bits * ch.noise_power * LN2 / (ch.bandwidth * np.asarray(gain))


def uplink_rate(power, gain, ch: ChannelSpec):
    return ch.bandwidth * np.log2(1.0 + np.asarray(power) * gain / ch.noise_power)


def tx_power(tau, scheduled, gain, ch: ChannelSpec):
    """Transmit power implied by an upload of length ``tau`` (reporting only)."""
    tau = np.asarray(tau, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tau > 0, comm_energy(tau, scheduled, gain, ch) / np.where(tau > 0, tau, 1.0), 0.0)
    return p


def uav_overhead_time(schedule_col, gains, uav: UavSpec, ch: ChannelSpec) -> float:
    """Aggregation plus broadcast time at the UAV; zero when nobody uploads.

    Diagnostic only, the solver neglects it.
    """
    col = np.asarray(schedule_col, dtype=bool)
    if not col.any():
        return 0.0
    k = col.size
    worst = np.min(uplink_rate(uav.tx_power, np.asarray(gains)[col], ch))
    return k * uav.cycles_per_model / uav.cpu_freq + ch.model_bits / worst
