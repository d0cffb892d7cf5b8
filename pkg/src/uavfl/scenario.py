"""Scenario container, deterministic generation and the JSON scenario file."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import jsonschema
import numpy as np

from .model import ChannelSpec, DeviceSpec, FlSpec, UavSpec
from .options import SolverOptions

# Table-I style defaults
REF_GAIN_DB = -50.0
NOISE_PSD_DBM_HZ = -174.0
BANDWIDTH_HZ = 10e6
BITS_PER_PARAM = 32
MODEL_DIM = 32 * 32 * 3 * 10
CPU_FREQ = 5e9
CYCLES_PER_SAMPLE = 10
CAPACITANCE = 1e-28
FULL_ROUNDS = 4000
FULL_LEARN_RATE = 0.01
MEAN_DATASET = 1250
ALTITUDE = 100.0
UAV_START = (200.0, 0.0)
MAX_SPEED = 20.0
MAX_STEP = 10.0
CLUSTER_CENTERS = ((100.0, 100.0), (300.0, 300.0))
CLUSTER_RADIUS = 100.0


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ScenarioArrays:
    positions: np.ndarray  # K x 2
    sizes: np.ndarray
    sq_sizes: np.ndarray
    comp_time: np.ndarray
    comp_energy: np.ndarray
    budget: np.ndarray
    accuracy_C: float


@dataclass(frozen=True)
class Scenario:
    devices: tuple[DeviceSpec, ...]
    uav: UavSpec
    channel: ChannelSpec
    fl: FlSpec
    seed: int | None = None
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        if not self.devices:
            raise ValueError("scenario needs at least one device")

    @property
    def K(self) -> int:
        return len(self.devices)

    @property
    def N(self) -> int:
        return self.fl.rounds

    @cached_property
    def arrays(self) -> ScenarioArrays:
        from .convergence import accuracy_constant_C

        devs = self.devices
        sizes = np.array([d.dataset_size for d in devs], dtype=float)
        cycles = np.array([d.cycles_per_sample for d in devs], dtype=float)
        freq = np.array([d.cpu_freq for d in devs], dtype=float)
        alpha = np.array([d.capacitance_coeff for d in devs], dtype=float)
        return ScenarioArrays(
            positions=np.array([d.position for d in devs], dtype=float),
            sizes=sizes,
            sq_sizes=sizes ** 2,
            comp_time=cycles * sizes / freq,
            comp_energy=0.5 * alpha * cycles * sizes * freq ** 2,
            budget=np.array([d.energy_budget for d in devs], dtype=float),
            accuracy_C=accuracy_constant_C(self.fl, devs),
        )

    def static_trajectory(self) -> np.ndarray:
        return np.tile(np.asarray(self.uav.initial_position, dtype=float), (self.N + 1, 1))

    def with_epsilon(self, epsilon: float) -> "Scenario":
        return dataclasses.replace(self, fl=dataclasses.replace(self.fl, accuracy_target=float(epsilon)))

    def with_energy(self, energy: float) -> "Scenario":
        devs = tuple(dataclasses.replace(d, energy_budget=float(energy)) for d in self.devices)
        return dataclasses.replace(self, devices=devs)

    def with_options(self, **changes) -> "Scenario":
        return dataclasses.replace(self, options=dataclasses.replace(self.options, **changes))


def _uniform_disk(rng: np.random.Generator, center, radius: float) -> tuple[float, float]:
    while True:
        p = rng.uniform(-radius, radius, size=2)
        if p @ p <= radius * radius:
            return (center[0] + float(p[0]), center[1] + float(p[1]))


def generate_scenario(
    seed: int,
    K: int,
    scale: float = 1.0,
    energy: float = 10.0,
    epsilon: float = 0.2,
    grad_bound: float = 0.08,
    classes: int = 10,
) -> Scenario:
    """Two-cluster device layout with Table-I radio and compute parameters.

    ``floor(0.3 K)`` devices fall uniformly in a 100 m disk around (100, 100),
    the rest around (300, 300). ``scale`` shrinks the number of rounds and the
    dataset sizes for desk runs; the learning rate grows by ``1/scale`` so
    ``rounds * learn_rate`` (and hence the initial-gap term of the bound)
    is unchanged.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    n_a = int(math.floor(0.3 * K))
    lo = max(1, round(0.5 * MEAN_DATASET * scale))
    hi = max(lo, round(1.5 * MEAN_DATASET * scale))
    devices = []
    for k in range(K):
        center = CLUSTER_CENTERS[0] if k < n_a else CLUSTER_CENTERS[1]
        pos = _uniform_disk(rng, center, CLUSTER_RADIUS)
        size = int(rng.integers(lo, hi + 1))
        devices.append(
            DeviceSpec(
                position=pos,
                dataset_size=size,
                cycles_per_sample=CYCLES_PER_SAMPLE,
                cpu_freq=CPU_FREQ,
                capacitance_coeff=CAPACITANCE,
                energy_budget=energy,
            )
        )
    uav = UavSpec(
        altitude=ALTITUDE,
        initial_position=UAV_START,
        max_speed=MAX_SPEED,
        max_step=MAX_STEP,
        cpu_freq=1e10,
        cycles_per_model=10,
        tx_power=1.0,
    )
    channel = ChannelSpec(
        ref_gain=db_to_linear(REF_GAIN_DB),
        bandwidth=BANDWIDTH_HZ,
        noise_power=dbm_to_watts(NOISE_PSD_DBM_HZ) * BANDWIDTH_HZ,
        model_bits=BITS_PER_PARAM * MODEL_DIM,
    )
    fl = FlSpec(
        rounds=max(1, round(FULL_ROUNDS * scale)),
        learn_rate=FULL_LEARN_RATE / scale,
        accuracy_target=epsilon,
        grad_bound=grad_bound,
        initial_loss=math.log(classes),
        loss_floor=0.0,
    )
    return Scenario(devices=tuple(devices), uav=uav, channel=channel, fl=fl, seed=seed)


# --- file format -----------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["devices", "uav", "channel", "fl"],
    "properties": {
        "seed": {"type": ["integer", "null"]},
        "devices": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["position", "dataset_size", "cycles_per_sample", "cpu_freq",
                             "capacitance_coeff", "energy_budget"],
                "properties": {
                    "position": _POS,
                    "dataset_size": {"type": "integer", "minimum": 1},
                    "cycles_per_sample": _NUM,
                    "cpu_freq": _NUM,
                    "capacitance_coeff": _NUM,
                    "energy_budget": _NUM,
                },
                "additionalProperties": False,
            },
        },
        "uav": {
            "type": "object",
            "required": ["altitude", "initial_position", "max_speed", "max_step",
                         "cpu_freq", "cycles_per_model", "tx_power"],
            "properties": {"initial_position": _POS},
        },
        "channel": {
            "type": "object",
            "required": ["bandwidth", "model_bits"],
            "properties": {
                "ref_gain": _NUM,
                "ref_gain_db": _NUM,
                "bandwidth": _NUM,
                "noise_power": _NUM,
                "noise_power_dbm": _NUM,
                "noise_psd_dbm_hz": _NUM,
                "model_bits": _NUM,
            },
            "additionalProperties": False,
            "allOf": [
                {"oneOf": [{"required": ["ref_gain"]}, {"required": ["ref_gain_db"]}]},
                {"oneOf": [{"required": ["noise_power"]}, {"required": ["noise_power_dbm"]},
                           {"required": ["noise_psd_dbm_hz"]}]},
            ],
        },
        "fl": {
            "type": "object",
            "required": ["rounds", "learn_rate", "accuracy_target", "grad_bound", "initial_loss"],
            "properties": {"rounds": {"type": "integer", "minimum": 1}},
        },
        "options": {"type": "object"},
    },
}


class ConfigError(ValueError):
    """Scenario file failed to parse or validate."""


def scenario_to_dict(sc: Scenario) -> dict:
    """JSON-native dict (lists, not tuples) that validates against the schema."""
    devices = [{**dataclasses.asdict(d), "position": list(d.position)} for d in sc.devices]
    uav = {**dataclasses.asdict(sc.uav), "initial_position": list(sc.uav.initial_position)}
    return {
        "seed": sc.seed,
        "devices": devices,
        "uav": uav,
        "channel": dataclasses.asdict(sc.channel),
        "fl": dataclasses.asdict(sc.fl),
        "options": sc.options.to_dict(),
    }


def _channel_from_dict(raw: dict) -> ChannelSpec:
    ch = dict(raw)
    if "ref_gain_db" in ch:
        ch["ref_gain"] = db_to_linear(ch.pop("ref_gain_db"))
    if "noise_power_dbm" in ch:
        ch["noise_power"] = dbm_to_watts(ch.pop("noise_power_dbm"))
    if "noise_psd_dbm_hz" in ch:
        ch["noise_power"] = dbm_to_watts(ch.pop("noise_psd_dbm_hz")) * ch["bandwidth"]
    return ChannelSpec(**ch)


def scenario_from_dict(raw: dict) -> Scenario:
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
        devices = tuple(DeviceSpec(**{**d, "position": tuple(d["position"])}) for d in raw["devices"])
        uav_raw = dict(raw["uav"])
        uav_raw["initial_position"] = tuple(uav_raw["initial_position"])
        return Scenario(
            devices=devices,
            uav=UavSpec(**uav_raw),
            channel=_channel_from_dict(raw["channel"]),
            fl=FlSpec(**raw["fl"]),
            seed=raw.get("seed"),
            options=SolverOptions.from_dict(raw.get("options", {})),
        )
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid scenario: {exc.message} at {list(exc.absolute_path)}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def dump_scenario(sc: Scenario, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(scenario_to_dict(sc), indent=2, sort_keys=True) + "\n")
    return path


def load_scenario(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    return scenario_from_dict(raw)


def scenario_hash(sc: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
