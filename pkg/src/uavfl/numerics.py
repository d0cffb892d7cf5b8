"""Numerical primitives shared by the solvers.

Real principal-branch Lambert W, Euclidean ball projection, subgradient step
schedules and a vectorised safeguarded Newton root finder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

INV_E = math.exp(-1.0)
BRANCH_TOL = 1e-12
MAX_HALLEY_ITERS = 50


class LambertDomainError(ValueError):
    """Argument below the branch point -1/e."""


def _w0_guess(x: np.ndarray) -> np.ndarray:
    # Winitzki's approximation is within a few percent on [-0.32, inf)
    lx = np.log1p(np.maximum(x, -0.32))
    w = lx * (1.0 - np.log1p(lx) / (2.0 + lx))
    near = x < -0.32
    if np.any(near):
        p = np.sqrt(np.maximum(2.0 * (math.e * x[near] + 1.0), 0.0))
        w[near] = -1.0 + p - p * p / 3.0 + (11.0 / 72.0) * p ** 3
    return w


def lambert_w0(x):
    """Principal branch W0 of the Lambert W function for real ``x >= -1/e``.

    Accepts a scalar or an array and returns the same shape. Arguments within
    ``1e-12`` below the branch point are clamped to it.

    Raises
    ------
    LambertDomainError
        If any argument lies further below ``-1/e``.
    """
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=float).ravel()
    if np.any(arr < -INV_E - BRANCH_TOL) or np.any(np.isnan(arr)):
        bad = arr[(arr < -INV_E - BRANCH_TOL) | np.isnan(arr)][0]
        raise LambertDomainError(f"lambert_w0 undefined for x={bad!r} < -1/e")
    xa = np.maximum(arr, -INV_E)
    w = _w0_guess(xa)
    # the series guess is already exact to double precision this close to -1/e
    active = np.abs(w + 1.0) > 1e-7
    for _ in range(MAX_HALLEY_ITERS):
        if not active.any():
            break
        wa = w[active]
        ew = np.exp(wa)
        f = wa * ew - xa[active]
        wp1 = wa + 1.0
        dw = f / (ew * wp1 - (wa + 2.0) * f / (2.0 * wp1))
        w[active] = wa - dw
        done = np.abs(dw) <= 4e-16 * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return float(w[0]) if scalar else w.reshape(np.shape(x))


def one_plus_w(y):
    """Return ``1 + W0((y - 1)/e)`` for ``y >= 0`` without cancellation.

    This is the root ``u >= 0`` of ``(u - 1) e^u = y - 1``. Near ``y = 0`` the
    argument sits on the branch point, so a series in ``sqrt(2y)`` is used.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty_like(y)
    small = y < 1e-6
    if np.any(small):
        p = np.sqrt(2.0 * np.maximum(y[small], 0.0))
        out[small] = p - p * p / 3.0 + (11.0 / 72.0) * p ** 3 - (43.0 / 540.0) * p ** 4
    big = ~small
    if np.any(big):
        out[big] = 1.0 + lambert_w0((y[big] - 1.0) * INV_E)
    return out


def project_ball(x, radius: float) -> np.ndarray:
    """Project a 2-vector (or rows of an array) onto the ball of given radius."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    v = np.asarray(x, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(norm > radius, radius / norm, 1.0)
    return v * factor


@dataclass(frozen=True)
class StepSchedule:
    base_step: float
    mode: str = "diminishing"

    def __post_init__(self):
        if not self.base_step > 0:
            raise ValueError("base_step must be positive")
        if self.mode not in ("constant", "diminishing"):
            raise ValueError(f"unknown step mode {self.mode!r}")


def step(schedule: StepSchedule, iteration: int) -> float:
    """Step size for 1-based ``iteration``."""
    if iteration < 1:
        raise ValueError("iteration counts from 1")
    if schedule.mode == "constant":
        return schedule.base_step
    return schedule.base_step / math.sqrt(iteration)


def bracketed_newton(
    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    lo: np.ndarray,
    hi: np.ndarray,
    x0: np.ndarray | None = None,
    xtol: float = 1e-13,
    ftol: float = 0.0,
    max_iter: int = 200,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Elementwise root of a decreasing function on ``[lo, hi]``.

    ``fun`` returns ``(f, df)`` for an array of abscissae. The caller
    guarantees ``f(lo) > 0 > f(hi)``. Newton steps leaving the bracket fall
    back to bisection. Entries stop moving once the step, the bracket or
    ``|f| <= ftol`` is small enough. Returns ``(x, lo, hi)`` with the final
    brackets so a caller can pick the side that satisfies an inequality.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = 0.5 * (lo + hi) if x0 is None else np.clip(np.array(x0, dtype=float), lo, hi)
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(max_iter):
        f, df = fun(x)
        pos = f > 0
        lo = np.where(pos & ~done, x, lo)
        hi = np.where(~pos & ~done, x, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        scale = xtol * (1.0 + np.abs(x))
        done |= (np.abs(f) <= ftol) | (np.abs(xn - x) <= scale) | (hi - lo <= scale)
        x = np.where(done & (np.abs(f) <= ftol), x, xn)
        if done.all():
            break
    return x, lo, hi
