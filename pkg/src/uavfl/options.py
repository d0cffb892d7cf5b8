from __future__ import annotations

import dataclasses
from dataclasses import dataclass


@dataclass(frozen=True)
class SolverOptions:
    """Tunables for the two dual solvers and the outer BCD loop.

    ``tol`` and ``max_iters`` govern the scheduling dual ascent; ``patience``
    stops it early once the best recovered primal has not improved for that
    many iterations, and ``gap_tol`` once a dual-read feasible schedule is
    within that relative gap of the dual bound. ``local_moves`` caps the number of exact re-allocations
    spent on swap/drop moves after primal recovery. ``radius_scales`` lists
    the shrink factors of the movement balls tried in each trajectory step.
    """

    dual_step: float = 0.5
    step_mode: str = "diminishing"
    tol: float = 1e-6
    max_iters: int = 20000
    patience: int = 150
    gap_tol: float = 1e-4
    feas_tol: float = 1e-6
    refine_rounds: int = 8
    local_moves: int = 12
    traj_step: float = 0.5
    traj_tol: float = 1e-6
    traj_max_iters: int = 300
    max_outer: int = 20
    radius_scales: tuple = (1.0, 0.7, 0.5, 0.3)
    bcd_tol: float = 1e-3
    trace: bool = False

    def __post_init__(self):
        scales = tuple(float(x) for x in self.radius_scales)
        if not scales or any(not 0 < x <= 1 for x in scales):
            raise ValueError("radius_scales must be non-empty and lie in (0, 1]")
        object.__setattr__(self, "radius_scales", scales)
        if self.max_outer < 0 or self.max_iters < 1:
            raise ValueError("iteration limits must be non-negative")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["radius_scales"] = list(self.radius_scales)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "SolverOptions":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**raw)
