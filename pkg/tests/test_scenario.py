import json

import numpy as np
import pytest

from uavfl.options import SolverOptions
from uavfl.scenario import (
    CLUSTER_CENTERS,
    CLUSTER_RADIUS,
    ConfigError,
    db_to_linear,
    dbm_to_watts,
    dump_scenario,
    generate_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_hash,
    scenario_to_dict,
)


def test_cluster_sizes_K40():
    sc = generate_scenario(0, 40)
    pos = sc.arrays.positions
    in_a = np.hypot(*(pos - CLUSTER_CENTERS[0]).T) <= CLUSTER_RADIUS
    in_b = np.hypot(*(pos - CLUSTER_CENTERS[1]).T) <= CLUSTER_RADIUS
    assert in_a[:12].all() and in_b[12:].all()
    assert sc.K == 40 and sc.N == 4000


def test_generation_deterministic():
    a, b = generate_scenario(7, 10, 0.05), generate_scenario(7, 10, 0.05)
    assert scenario_to_dict(a) == scenario_to_dict(b)
    assert scenario_hash(a) == scenario_hash(b)
    assert scenario_hash(a) != scenario_hash(generate_scenario(8, 10, 0.05))


@pytest.mark.parametrize("seed", range(5))
def test_positions_inside_circles(seed):
    sc = generate_scenario(seed, 23, 0.1)
    n_a = int(0.3 * 23)
    for k, d in enumerate(sc.devices):
        c = CLUSTER_CENTERS[0] if k < n_a else CLUSTER_CENTERS[1]
        assert np.hypot(d.position[0] - c[0], d.position[1] - c[1]) <= CLUSTER_RADIUS


def test_geometry_and_scaling():
    sc = generate_scenario(3, 10, 0.05)
    assert sc.uav.initial_position == (200.0, 0.0)
    assert sc.uav.altitude == 100.0 and sc.uav.max_speed == 20.0 and sc.uav.max_step == 10.0
    assert sc.N == 200
    # rounds times learning rate preserved across scales
    full = generate_scenario(3, 10, 1.0)
    assert sc.N * sc.fl.learn_rate == pytest.approx(full.N * full.fl.learn_rate)
    assert all(31 <= d.dataset_size <= 94 for d in sc.devices)
    assert sc.channel.ref_gain == pytest.approx(1e-5)
    assert sc.channel.noise_power == pytest.approx(10 ** (-17.4) * 1e-3 * 1e7)


def test_rejects_small_K():
    with pytest.raises(ValueError):
        generate_scenario(0, 1)


def test_round_trip(tmp_path):
    sc = generate_scenario(11, 6, 0.05).with_options(max_outer=3, radius_scales=(1.0, 0.4))
    path = dump_scenario(sc, tmp_path / "s.json")
    back = load_scenario(path)
    assert back == sc
    assert scenario_to_dict(back) == scenario_to_dict(sc)


def test_db_fields_normalized(tmp_path):
    raw = scenario_to_dict(generate_scenario(1, 3, 0.05))
    ch = raw["channel"]
    del ch["ref_gain"], ch["noise_power"]
    ch["ref_gain_db"] = -50.0
    ch["noise_psd_dbm_hz"] = -174.0
    sc = scenario_from_dict(raw)
    assert sc.channel.ref_gain == pytest.approx(db_to_linear(-50.0))
    assert sc.channel.noise_power == pytest.approx(dbm_to_watts(-174.0) * 1e7)
    raw2 = json.loads(json.dumps(raw))
    del raw2["channel"]["noise_psd_dbm_hz"]
    raw2["channel"]["noise_power_dbm"] = -104.0
    assert scenario_from_dict(raw2).channel.noise_power == pytest.approx(dbm_to_watts(-104.0))


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("devices"),
    lambda r: r["devices"][0].pop("energy_budget"),
    lambda r: r["devices"][0].update(dataset_size=0),
    lambda r: r["devices"][0].update(energy_budget=-1.0),
    lambda r: r["channel"].update(ref_gain_db=-50.0),  # both linear and dB given
    lambda r: r["fl"].update(rounds="many"),
    lambda r: r["options"].update(bogus=1),
    lambda r: r["uav"].update(max_step=500.0),
])
def test_invalid_files_raise_config_error(mutate):
    raw = scenario_to_dict(generate_scenario(1, 3, 0.05))
    mutate(raw)
    with pytest.raises(ConfigError):
        scenario_from_dict(raw)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(bad)


def test_with_helpers():
    sc = generate_scenario(0, 4, 0.05)
    assert sc.with_epsilon(0.3).fl.accuracy_target == 0.3
    assert all(d.energy_budget == 30.0 for d in sc.with_energy(30.0).devices)
    assert sc.with_options(max_outer=2).options.max_outer == 2
    assert sc.options == SolverOptions()
    Q = sc.static_trajectory()
    assert Q.shape == (sc.N + 1, 2) and np.all(Q == (200.0, 0.0))


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(radius_scales=())
    with pytest.raises(ValueError):
        SolverOptions(radius_scales=(1.5,))
    with pytest.raises(ValueError):
        SolverOptions(max_outer=-1)
    with pytest.raises(ValueError):
        SolverOptions.from_dict({"nope": 1})
    o = SolverOptions(radius_scales=[1, 0.5])
    assert o.radius_scales == (1.0, 0.5)
    assert SolverOptions.from_dict(o.to_dict()) == o
