import csv

import numpy as np
import pytest

from uavfl import fl_sim
from uavfl.fl_sim import (
    Dataset,
    aggregate,
    estimate_kappa,
    generate_synthetic,
    local_update,
    loss_and_grad,
    run_fl,
    sample_grad_sq_norms,
)


def test_generation_is_deterministic():
    a = generate_synthetic(7, 3, sizes=[40, 50, 60])
    b = generate_synthetic(7, 3, sizes=[40, 50, 60])
    for x, y in zip(a.features + a.labels, b.features + b.labels):
        assert np.array_equal(x, y)
    c = generate_synthetic(8, 3, sizes=[40, 50, 60])
    assert not np.array_equal(a.features[0], c.features[0])


def test_sizes_and_totals():
    data = generate_synthetic(0, 2, sizes=[10, 20])
    assert data.total == 30 and data.sizes.tolist() == [10, 20]
    assert data.dim == 64 and data.K == 2
    with pytest.raises(ValueError):
        generate_synthetic(0, 3, sizes=[10, 20])


def test_labels_cover_classes():
    data = generate_synthetic(1, 4, classes=10, d=64, sizes=[250, 250, 300, 200])
    _, y = data.stacked()
    assert y.size >= 1000
    assert np.all(np.bincount(y, minlength=10) > 0)


def test_dataset_validation():
    X = np.zeros((2, 3))
    with pytest.raises(ValueError):
        Dataset([X], [np.array([0, 5])], classes=3)
    with pytest.raises(ValueError):
        Dataset([X], [np.array([0])], classes=3)
    with pytest.raises(ValueError):
        Dataset([np.full((1, 3), np.nan)], [np.array([0])], classes=3)


def test_gradient_matches_finite_differences(rng):
    X = rng.normal(size=(30, 6))
    y = rng.integers(0, 4, size=30)
    W = rng.normal(scale=0.5, size=(6, 4))
    _, g = loss_and_grad(W, X, y)
    h = 1e-6
    for _ in range(20):
        V = rng.normal(size=W.shape)
        fd = (loss_and_grad(W + h * V, X, y)[0] - loss_and_grad(W - h * V, X, y)[0]) / (2 * h)
        assert abs(fd - (g * V).sum()) <= 1e-5 * max(abs(fd), 1e-8)


def test_local_update_fixed_points(rng):
    X = rng.normal(size=(10, 5))
    y = rng.integers(0, 3, size=10)
    W = rng.normal(size=(5, 3))
    assert np.array_equal(local_update(W, X, y, 0.0), W)
    # a zero sample vector has zero gradient for every model
    Z = np.zeros((4, 5))
    assert np.array_equal(local_update(W, Z, y[:4], 0.3), W)


def test_aggregate_toy():
    models = [np.array(0.0), np.array(4.0)]
    assert aggregate(models, [1, 1], [1, 3]) == pytest.approx(3.0)
    assert aggregate(models, [1, 1], [1, 3], mode="unweighted") == pytest.approx(2.0)
    assert aggregate(models, [0, 1], [1, 3]) == pytest.approx(4.0)
    assert aggregate(models, [1, 1], [2, 2]) == aggregate(models, [1, 1], [2, 2], mode="unweighted")
    prev = np.array(9.0)
    assert aggregate(models, [0, 0], [1, 3], previous=prev) is prev
    with pytest.raises(ValueError):
        aggregate(models, [1, 1], [1, 3], mode="median")


def test_empty_schedule_never_moves():
    data = generate_synthetic(2, 3, sizes=[30, 30, 30])
    log = run_fl(data, np.zeros((3, 12), dtype=int), 0.1)
    assert np.all(log.loss == log.loss[0])
    assert log.final_loss == log.loss[0]
    assert log.loss[0] == pytest.approx(np.log(10))


def test_full_schedule_loss_decreases():
    data = generate_synthetic(3, 4, sizes=[60, 80, 100, 120])
    log = run_fl(data, np.ones((4, 40), dtype=int), 0.01)
    assert np.all(np.diff(log.loss) <= 0)
    assert log.final_loss <= log.loss[-1]


def test_run_is_deterministic_and_logged(tmp_path):
    data = generate_synthetic(4, 3, sizes=[20, 30, 40])
    A = (np.random.default_rng(0).random((3, 15)) < 0.5).astype(int)
    a, b = run_fl(data, A, 0.05), run_fl(data, A, 0.05)
    assert np.array_equal(a.loss, b.loss) and np.array_equal(a.grad_sq, b.grad_sq)
    assert a.rounds == 15 and a.avg_grad_sq == pytest.approx(a.grad_sq.mean())
    assert a.scheduled.tolist() == A.sum(0).tolist()
    path = a.write_csv(tmp_path / "fl.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["round", "loss", "grad_norm_sq", "num_scheduled"]
    assert len(rows) == 16
    with pytest.raises(ValueError):
        run_fl(data, np.ones((2, 3)), 0.05)


def test_kappa_running_max():
    data = generate_synthetic(5, 2, sizes=[25, 25])
    log = run_fl(data, np.ones((2, 10), dtype=int), 0.05, keep_models=True)
    steps = [estimate_kappa(data, log.models[:n]) for n in range(1, 11)]
    assert np.all(np.diff(steps) >= 0)
    assert steps[-1] == pytest.approx(log.kappa, rel=1e-12)
    with pytest.raises(ValueError):
        estimate_kappa(data, [])


def test_kappa_two_sample_toy(rng):
    X = np.array([[1.0, 2.0], [-0.5, 0.3]])
    y = np.array([0, 1])
    data = Dataset([X], [y], classes=2)
    W = rng.normal(size=(2, 2))
    direct = []
    for x, label in zip(X, y):
        _, g = loss_and_grad(W, x[None, :], np.array([label]))
        direct.append((g ** 2).sum())
    np.testing.assert_allclose(sample_grad_sq_norms(W, X, y), direct, rtol=1e-12)
    assert estimate_kappa(data, [W]) == pytest.approx(max(direct), rel=1e-12)


def test_kappa_zero_at_stationary_point():
    # zero features make every per-sample gradient vanish
    data = Dataset([np.zeros((3, 4))], [np.array([0, 1, 2])], classes=3)
    assert estimate_kappa(data, [np.ones((4, 3))]) == 0.0


def test_bound_holds_on_small_run():
    data = generate_synthetic(6, 4, sizes=[50, 60, 70, 80])
    kappa = fl_sim.calibrate_kappa(data, 0.01, 30)
    A = (np.random.default_rng(1).random((4, 30)) < 0.5).astype(int)
    log = run_fl(data, A, 0.01)
    assert log.kappa <= kappa
    assert log.avg_grad_sq <= fl_sim.bound_for_run(log, data, A, 0.01)
    assert log.avg_grad_sq <= fl_sim.bound_for_run(log, data, A, 0.01, kappa)
