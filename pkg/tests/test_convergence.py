import dataclasses
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from uavfl.convergence import (
    ACCURACY_UNREACHABLE,
    ENERGY_SHORTFALL,
    accuracy_constant_C,
    check_feasibility,
    convergence_bound,
    initial_gap_term,
)
from uavfl.model import DeviceSpec, FlSpec
from uavfl.scenario import generate_scenario


def devices(sizes):
    return [DeviceSpec((0.0, 0.0), int(s), 10, 5e9, 1e-28, 10.0) for s in sizes]


FL = FlSpec(rounds=4, learn_rate=0.5, accuracy_target=2.0, grad_bound=0.1, initial_loss=2.0, loss_floor=0.5)


def brute_bound(fl, sizes, A):
    """Direct double sum, written independently of the library."""
    K, N = A.shape
    D = sum(sizes)
    total = 0.0
    for n in range(N):
        for k in range(K):
            total += (1 - A[k, n]) * sizes[k] ** 2
    return 2 * (fl.initial_loss - fl.loss_floor) / (N * fl.learn_rate) + 4 * K * fl.grad_bound / (N * D * D) * total


def test_full_schedule_gives_first_term():
    devs = devices([100, 200, 300])
    A = np.ones((3, 4))
    assert convergence_bound(FL, devs, A) == pytest.approx(2 * 1.5 / (4 * 0.5))
    assert convergence_bound(FL, devs, A) == initial_gap_term(FL)


def test_empty_schedule():
    sizes = [100, 200, 300]
    expected = initial_gap_term(FL) + 4 * 3 * 0.1 * sum(s * s for s in sizes) / sum(sizes) ** 2
    assert convergence_bound(FL, devices(sizes), np.zeros((3, 4))) == pytest.approx(expected, rel=1e-14)


def test_shape_checked():
    with pytest.raises(ValueError):
        convergence_bound(FL, devices([1, 2]), np.ones((3, 4)))


@given(st.lists(st.integers(1, 3000), min_size=1, max_size=4), st.integers(0, 2 ** 16 - 1), st.integers(1, 4))
def test_bound_matches_brute_force_and_is_monotone(sizes, bits, N):
    K = len(sizes)
    A = np.array([(bits >> i) & 1 for i in range(K * N)]).reshape(K, N)
    fl = dataclasses.replace(FL, rounds=N)
    b = convergence_bound(fl, devices(sizes), A)
    assert b == pytest.approx(brute_bound(fl, sizes, A), rel=1e-12)
    off = np.argwhere(A == 0)
    if off.size:
        B = A.copy()
        B[tuple(off[0])] = 1
        assert convergence_bound(fl, devices(sizes), B) <= b


def test_all_ones_is_minimum_exhaustive():
    sizes = [300, 500, 800]
    for K, N in [(2, 2), (3, 2), (3, 3)]:
        fl = dataclasses.replace(FL, rounds=N)
        devs = devices(sizes[:K])
        best = min(convergence_bound(fl, devs, np.array(bits).reshape(K, N))
                   for bits in itertools.product((0, 1), repeat=K * N))
        assert best == convergence_bound(fl, devs, np.ones((K, N)))


def test_C_at_full_bound_target():
    devs = devices([100, 200, 300])
    fl = dataclasses.replace(FL, accuracy_target=initial_gap_term(FL))
    assert accuracy_constant_C(fl, devs) == pytest.approx(4 * (100 ** 2 + 200 ** 2 + 300 ** 2), rel=1e-14)


def test_C_equivalence_equal_sizes():
    """Scheduling constraint holds exactly when the bound meets the target (equal D_k)."""
    rng = np.random.default_rng(3)
    K, N = 5, 6
    sizes = [400] * K
    devs = devices(sizes)
    fl = dataclasses.replace(FL, rounds=N, accuracy_target=initial_gap_term(dataclasses.replace(FL, rounds=N)) + 0.25)
    C = accuracy_constant_C(fl, devs)
    agree = 0
    for _ in range(100):
        A = (rng.random((K, N)) < rng.uniform(0.2, 0.95)).astype(int)
        lhs = float((A * np.array(sizes)[:, None] ** 2).sum())
        assert (lhs >= C) == (brute_bound(fl, sizes, A) <= fl.accuracy_target + 1e-12)
        agree += 1
    assert agree == 100


def test_C_nonpositive_is_vacuous():
    devs = devices([100, 200])
    fl = dataclasses.replace(FL, accuracy_target=1e6)
    assert accuracy_constant_C(fl, devs) <= 0
    # every schedule, even the empty one, meets the bound
    assert convergence_bound(fl, devs, np.zeros((2, 4))) <= fl.accuracy_target


def test_feasibility_zero_gap():
    sc = generate_scenario(0, 4, 0.05)
    sc = dataclasses.replace(sc, fl=dataclasses.replace(sc.fl, initial_loss=0.0, loss_floor=0.0))
    rep = check_feasibility(sc)
    assert rep.min_rounds == 0
    assert rep.feasible and rep.reasons == []


def test_feasibility_slack_target_clamps_required():
    sc = generate_scenario(0, 4, 0.05).with_epsilon(1e6)
    rep = check_feasibility(sc)
    assert rep.required_scheduled == 0
    assert rep.energy_floor == 0.0
    assert rep.feasible


def test_feasibility_accuracy_unreachable():
    sc = generate_scenario(1, 6, 0.05)
    full = convergence_bound(sc.fl, sc.devices, np.ones((sc.K, sc.N)))
    bad = sc.with_epsilon(0.9 * full)
    rep = check_feasibility(bad)
    assert not rep.feasible
    assert ACCURACY_UNREACHABLE in rep.reasons
    assert rep.min_rounds == math.ceil(2 * (sc.fl.initial_loss - sc.fl.loss_floor) / (0.9 * full * sc.fl.learn_rate))


def test_feasibility_energy_shortfall():
    sc = generate_scenario(1, 6, 0.05).with_energy(1e-9)
    rep = check_feasibility(sc)
    assert ENERGY_SHORTFALL in rep.reasons and not rep.feasible
    d = rep.to_dict()
    assert d["feasible"] is False and d["reasons"] == rep.reasons


def test_required_scheduled_formula():
    sc = generate_scenario(2, 10, 0.05)
    fl = sc.fl
    sizes = np.array([d.dataset_size for d in sc.devices], float)
    K, N, D = sc.K, sc.N, sizes.sum()
    slack = fl.accuracy_target - 2 * (fl.initial_loss - fl.loss_floor) / (N * fl.learn_rate)
    raw = K * N - slack * N * D ** 2 / (4 * fl.grad_bound * K * sizes.max() ** 2)
    rep = check_feasibility(sc)
    assert rep.required_scheduled == min(max(math.ceil(raw), 0), K * N)
    ch = sc.channel
    floor = rep.required_scheduled * ch.noise_power * ch.model_bits * sc.uav.altitude ** 2 * math.log(2) / (
        ch.ref_gain * ch.bandwidth)
    assert rep.energy_floor == pytest.approx(floor, rel=1e-12)
