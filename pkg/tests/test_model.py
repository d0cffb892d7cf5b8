import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavfl.model import (
    ChannelSpec,
    DeviceSpec,
    FlSpec,
    UavSpec,
    channel_gain,
    channel_gains,
    comm_energy,
    comm_energy_floor,
    comp_energy,
    comp_time,
    round_comp_time,
    tx_power,
    uav_overhead_time,
    uplink_rate,
)

CH = ChannelSpec(ref_gain=1e-5, bandwidth=1e7, noise_power=3.98e-14, model_bits=983040)
UAV = UavSpec(altitude=100.0, initial_position=(200.0, 0.0), max_speed=20.0, max_step=10.0,
              cpu_freq=1e10, cycles_per_model=10, tx_power=1.0)


def device(pos=(0.0, 0.0), D=1250, f=5e9, E=10.0):
    return DeviceSpec(position=pos, dataset_size=D, cycles_per_sample=10, cpu_freq=f,
                      capacitance_coeff=1e-28, energy_budget=E)


def test_spec_invariants():
    with pytest.raises(ValueError):
        device(D=0)
    with pytest.raises(ValueError):
        device(E=0.0)
    with pytest.raises(ValueError):
        UavSpec(100.0, (0, 0), 20.0, 150.0, 1e10, 10, 1.0)
    with pytest.raises(ValueError):
        ChannelSpec(0.0, 1e7, 1e-14, 1e6)
    with pytest.raises(ValueError):
        FlSpec(rounds=10, learn_rate=0.1, accuracy_target=0.1, grad_bound=1.0, initial_loss=0.0, loss_floor=1.0)


def test_channel_gain_examples():
    dev = device()
    assert channel_gain((0.0, 0.0), dev, UAV, CH) == pytest.approx(1e-9, rel=1e-12)
    assert channel_gain((100.0, 0.0), dev, UAV, CH) == pytest.approx(5e-10, rel=1e-12)
    assert channel_gain((0.0, 0.0), dev, UAV, CH) >= channel_gain((3.0, -4.0), dev, UAV, CH)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1.0, 300.0))
def test_channel_gain_identity(x, y, H):
    uav = UavSpec(H, (0, 0), 20.0, 0.5, 1e10, 10, 1.0)
    g = channel_gain((x, y), device(), uav, CH)
    assert g * (H ** 2 + x * x + y * y) == pytest.approx(CH.ref_gain, rel=1e-12)


def test_channel_gains_matrix_matches_scalar():
    pts = np.array([[0.0, 0.0], [50.0, 20.0], [200.0, 0.0]])
    devs = [device((10.0, 10.0)), device((300.0, 300.0))]
    G = channel_gains(pts, np.array([d.position for d in devs]), UAV.altitude, CH.ref_gain)
    for k, d in enumerate(devs):
        for n, p in enumerate(pts):
            assert G[k, n] == pytest.approx(channel_gain(p, d, UAV, CH), rel=1e-14)


def test_comp_time_examples():
    assert comp_time(device()) == pytest.approx(2.5e-6)
    assert comp_time(SimpleNamespace(cycles_per_sample=10, dataset_size=0, cpu_freq=5e9)) == 0.0
    assert comp_time(device(f=1e10)) == pytest.approx(comp_time(device()) / 2)


def test_comp_energy_examples():
    assert comp_energy(device(), 1) == pytest.approx(1.5625e-5)
    assert comp_energy(device(), 0) == 0.0
    assert comp_energy(device(D=2500), 1) / comp_energy(device(D=1250), 1) == 2.0
    np.testing.assert_allclose(comp_energy(device(), np.array([1, 0, 1])), [1.5625e-5, 0.0, 1.5625e-5])


def test_round_comp_time():
    devs = [device(D=1250), device(D=2500)]
    assert round_comp_time([0, 0], devs) == 0.0
    assert round_comp_time([1, 0], devs) == pytest.approx(2.5e-6)
    assert round_comp_time([1, 1], devs) == pytest.approx(5e-6)


def test_comm_energy_examples():
    assert comm_energy(0.0, 1, 1e-9, CH) == 0.0
    assert comm_energy(0.3, 0, 1e-9, CH) == 0.0
    limit = comm_energy_floor(1, 1e-9, CH)
    assert limit == pytest.approx(2.71e-6, rel=2e-3)
    assert limit == pytest.approx(983040 * 3.98e-14 * math.log(2) / (1e7 * 1e-9), rel=1e-12)
    assert comm_energy(1e4, 1, 1e-9, CH) == pytest.approx(limit, rel=1e-4)
    with pytest.raises(ValueError):
        comm_energy(-1.0, 1, 1e-9, CH)


def test_comm_energy_decreasing_above_floor():
    tau = np.geomspace(1e-3, 1e3, 200)
    e = comm_energy(tau, 1, 1e-9, CH)
    assert np.all(np.diff(e) < 0)
    assert np.all(e > comm_energy_floor(1, 1e-9, CH))


def test_comm_energy_continuous_at_zero():
    # approaching zero upload time from the right costs unbounded energy only when bits are sent
    assert comm_energy(1e-12, 0, 1e-9, CH) == 0.0
    assert comm_energy(np.array([0.0, 0.0]), np.array([1, 0]), 1e-9, CH).tolist() == [0.0, 0.0]


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_comm_energy_midpoint_convexity(t1, t2, a1, a2):
    """Perspective of a convex function: jointly convex in (a, tau)."""
    h = 1e-9
    e1, e2 = comm_energy(t1, a1, h, CH), comm_energy(t2, a2, h, CH)
    em = comm_energy(0.5 * (t1 + t2), 0.5 * (a1 + a2), h, CH)
    assert em <= 0.5 * (e1 + e2) * (1 + 1e-9) + 1e-300


def test_tx_power_recovers_rate():
    tau, h = 0.05, 1e-9
    p = tx_power(tau, 1, h, CH)
    assert uplink_rate(p, h, CH) * tau == pytest.approx(CH.model_bits, rel=1e-10)
    assert tx_power(0.0, 1, h, CH) == 0.0


def test_uav_overhead():
    assert uav_overhead_time([0, 0], [1e-9, 1e-9], UAV, CH) == 0.0
    col = np.ones(40, dtype=int)
    t = uav_overhead_time(col, np.full(40, 1e-9), UAV, CH)
    first = 40 * 10 / 1e10
    assert first == pytest.approx(4e-8)
    assert t == pytest.approx(first + CH.model_bits / uplink_rate(1.0, 1e-9, CH))


def test_uav_overhead_below_round_time():
    from uavfl.bcd import solve
    from uavfl.scenario import generate_scenario

    sc = generate_scenario(0, 10, 0.05)
    res = solve(sc.with_options(max_outer=0))
    G = channel_gains(res.trajectory[1:], sc.arrays.positions, sc.uav.altitude, sc.channel.ref_gain)
    busy = np.flatnonzero(res.schedule.any(axis=0))
    over = np.array([uav_overhead_time(res.schedule[:, n], G[:, n], sc.uav, sc.channel) for n in busy])
    busy_time = res.tau[:, busy].sum(axis=0) + np.max(res.schedule[:, busy] * sc.arrays.comp_time[:, None], axis=0)
    assert np.all(over < busy_time)
