"""Scheduled federated training of a multinomial logistic regression model.

Used to check the convergence bound empirically: the model starts at zero,
each round the scheduled devices take one full-batch gradient step from the
broadcast model and the server averages what it receives.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .convergence import convergence_bound
from .model import FlSpec


@dataclass
class Dataset:
    features: list  # per device, D_k x d
    labels: list  # per device, D_k ints
    classes: int

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels must cover the same devices")
        for X, y in zip(self.features, self.labels):
            if X.shape[0] != y.shape[0]:
                raise ValueError("each device needs one label per sample")
            if not np.all(np.isfinite(X)):
                raise ValueError("features must be finite")
            if y.size and (y.min() < 0 or y.max() >= self.classes):
                raise ValueError("labels out of range")

    @property
    def K(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features[0].shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([y.size for y in self.labels], dtype=int)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        return np.vstack(self.features), np.concatenate(self.labels)


def generate_synthetic(seed: int, K: int, classes: int = 10, d: int = 64, sizes=None,
                       separation: float = 3.0) -> Dataset:
    """Gaussian class-conditional features with well separated class means.

    Labels cycle through the classes on every device before shuffling, so
    each device sees a near-uniform label mix.
    """
    sizes = [100] * K if sizes is None else [int(s) for s in sizes]
    if len(sizes) != K:
        raise ValueError("sizes must have length K")
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(classes, d))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    feats, labels = [], []
    for size in sizes:
        y = rng.permutation(np.arange(size) % classes)
        X = means[y] + rng.normal(size=(size, d)) / np.sqrt(d)
        feats.append(X)
        labels.append(y.astype(int))
    return Dataset(feats, labels, classes)


def _probs(W, X):
    z = X @ W
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(W, X, y) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the samples and its gradient with respect to ``W`` (d x classes)."""
    n = y.size
    if n == 0:
        return 0.0, np.zeros_like(W)
    z = X @ W
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    P = np.exp(logp)
    loss = -float(logp[np.arange(n), y].mean())
    P[np.arange(n), y] -= 1.0
    return loss, X.T @ P / n


def sample_grad_sq_norms(W, X, y) -> np.ndarray:
    """Squared norm of each per-sample gradient ``x (p - e_y)^T``."""
    P = _probs(W, X)
    P[np.arange(y.size), y] -= 1.0
    return (X ** 2).sum(axis=1) * (P ** 2).sum(axis=1)


def local_update(W, X, y, eta: float) -> np.ndarray:
    _, g = loss_and_grad(W, X, y)
    return W - eta * g


def aggregate(models, schedule_col, sizes, mode: str = "weighted", previous=None):
    """Average of the received models; the previous model when nobody uploads.

    ``models`` holds one entry per device (ignored where not scheduled).
    """
    a = np.asarray(schedule_col, dtype=float)
    if mode not in ("weighted", "unweighted"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    w = a * np.asarray(sizes, dtype=float) if mode == "weighted" else a
    if w.sum() == 0:
        return previous
    out = None
    for k in np.flatnonzero(w):
        term = w[k] * np.asarray(models[k], dtype=float)
        out = term if out is None else out + term
    return out / w.sum()


@dataclass
class FLRunLog:
    loss: np.ndarray  # F(w_n), n = 0..N-1
    grad_sq: np.ndarray  # |grad F(w_n)|^2
    scheduled: np.ndarray  # devices aggregated in round n+1
    final_loss: float
    kappa: float
    bound: float = np.nan
    models: list = field(default_factory=list, repr=False)

    @property
    def rounds(self) -> int:
        return int(self.loss.size)

    @property
    def avg_grad_sq(self) -> float:
        return float(self.grad_sq.mean())

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "loss", "grad_norm_sq", "num_scheduled"])
            for n in range(self.rounds):
                w.writerow([n, repr(float(self.loss[n])), repr(float(self.grad_sq[n])), int(self.scheduled[n])])
        return path


def global_loss_grad(W, data: Dataset):
    X, y = data.stacked()
    return loss_and_grad(W, X, y)


def run_fl(data: Dataset, schedule, eta: float, mode: str = "weighted", keep_models: bool = False) -> FLRunLog:
    """Run ``N = schedule.shape[1]`` rounds from the zero model.

    Logs the global loss and squared gradient norm of the model each round
    starts from, and the running maximum of per-sample squared gradient
    norms over those models.
    """
    a = np.asarray(schedule)
    if a.shape[0] != data.K:
        raise ValueError("schedule must have one row per device")
    N = a.shape[1]
    X_all, y_all = data.stacked()
    W = np.zeros((data.dim, data.classes))
    losses, grads, counts, models = np.empty(N), np.empty(N), np.empty(N, dtype=int), []
    kappa = 0.0
    for n in range(N):
        loss, g = loss_and_grad(W, X_all, y_all)
        losses[n], grads[n] = loss, float((g ** 2).sum())
        kappa = max(kappa, float(sample_grad_sq_norms(W, X_all, y_all).max()))
        if keep_models:
            models.append(W.copy())
        col = a[:, n]
        counts[n] = int(col.sum())
        locals_ = [local_update(W, data.features[k], data.labels[k], eta) if col[k] else None
                   for k in range(data.K)]
        W = aggregate(locals_, col, data.sizes, mode, previous=W)
    final, _ = loss_and_grad(W, X_all, y_all)
    return FLRunLog(losses, grads, counts, float(final), kappa, models=models)


def estimate_kappa(data: Dataset, models) -> float:
    """Largest per-sample squared gradient norm over the given models."""
    if not len(models):
        raise ValueError("need at least one model")
    X, y = data.stacked()
    return max(float(sample_grad_sq_norms(W, X, y).max()) for W in models)


def calibrate_kappa(data: Dataset, eta: float, rounds: int, safety: float = 1.5) -> float:
    """Safety factor times the gradient bound measured on a full-participation pilot run."""
    pilot = run_fl(data, np.ones((data.K, rounds), dtype=int), eta)
    return safety * pilot.kappa


def fl_spec_for(data: Dataset, rounds: int, eta: float, kappa: float, epsilon: float) -> FlSpec:
    """FL parameters matching a run from the zero model (loss ``ln classes``, floor 0)."""
    return FlSpec(rounds=rounds, learn_rate=eta, accuracy_target=epsilon, grad_bound=kappa,
                  initial_loss=float(np.log(data.classes)), loss_floor=0.0)


def scenario_for_dataset(scenario, data: Dataset, eta: float, kappa: float, epsilon: float | None = None,
                         coverage: float = 0.5):
    """Scenario whose devices hold ``data`` and whose accuracy target suits the FL run.

    Without ``epsilon`` the target sits so that a ``coverage`` share of the
    full ``N sum D_k^2`` participation is required.
    """
    devices = tuple(dataclasses.replace(d, dataset_size=int(s)) for d, s in zip(scenario.devices, data.sizes))
    rounds = scenario.N
    if epsilon is None:
        sizes = data.sizes.astype(float)
        first = 2.0 * np.log(data.classes) / (rounds * eta)
        worst = 4.0 * data.K * kappa * (sizes ** 2).sum() / sizes.sum() ** 2
        epsilon = float(first + (1.0 - coverage) * worst)
    fl = fl_spec_for(data, rounds, eta, kappa, epsilon)
    return dataclasses.replace(scenario, devices=devices, fl=fl)


def bound_for_run(log: FLRunLog, data: Dataset, schedule, eta: float, kappa: float | None = None) -> float:
    """Convergence bound for the executed schedule, with the run's measured gradient bound by default."""
    a = np.asarray(schedule)
    spec = fl_spec_for(data, a.shape[1], eta, log.kappa if kappa is None else kappa, 1.0)
    devices = [SimpleNamespace(dataset_size=int(s)) for s in data.sizes]
    return convergence_bound(spec, devices, a)
