"""Result files: one JSON summary per run plus CSV tables for arrays and traces.

Nothing here records wall-clock time, so identical inputs give identical
files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .scenario import scenario_hash

TRAJECTORY_STRIDE = 5


def _float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def result_summary(result, scenario, scheme: str = "joint", **extra) -> dict:
    """JSON-ready summary of a solve with the reproducibility header."""
    res = {}
    for k, v in result.residuals.items():
        if isinstance(v, (bool, np.bool_)):
            res[k] = bool(v)
        else:
            res[k] = _float(np.max(v, initial=0.0))  # worst case, clipped at satisfied
    out = {
        "scenario_hash": scenario_hash(scenario),
        "seed": scenario.seed,
        "options": scenario.options.to_dict(),
        "scheme": str(scheme),
        "K": scenario.K,
        "N": scenario.N,
        "energy_budget": [d.energy_budget for d in scenario.devices],
        "accuracy_target": scenario.fl.accuracy_target,
        "completion_time": _float(result.completion_time),
        "history": [_float(t) for t in result.history],
        "converged": bool(result.converged),
        "outer_iterations": int(result.iterations),
        "scheduled_pairs": int(np.asarray(result.schedule).sum()),
        "scheduled_fraction": _float(result.scheduled_fraction),
        "dual_bound": _float(result.dual_bound),
        "feasibility": result.feasibility.to_dict(),
        "residuals": res,
    }
    out.update(extra)
    return out


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_rows(rows, path, columns=None) -> Path:
    """CSV from a list of dicts; columns default to the first row's keys."""
    path = Path(path)
    rows = list(rows)
    columns = list(columns or (rows[0].keys() if rows else []))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return path


def read_rows(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def trajectory_rows(trajectory, stride: int = TRAJECTORY_STRIDE) -> list[dict]:
    """Waypoints every ``stride`` rounds, always keeping the last one."""
    Q = np.asarray(trajectory, dtype=float)
    idx = list(range(0, Q.shape[0], max(1, stride)))
    if idx[-1] != Q.shape[0] - 1:
        idx.append(Q.shape[0] - 1)
    return [{"round": i, "x": float(Q[i, 0]), "y": float(Q[i, 1])} for i in idx]


def slot_rows(result) -> list[dict]:
    a = np.asarray(result.schedule)
    speeds = result.speeds()
    return [
        {"round": n + 1, "delta": float(result.delta[n]), "scheduled": int(a[:, n].sum()),
         "upload_time": float(result.tau[:, n].sum()), "speed": float(speeds[n])}
        for n in range(a.shape[1])
    ]


def schedule_rows(result) -> list[dict]:
    """Scheduled pairs only, one row each."""
    a = np.asarray(result.schedule)
    return [{"device": int(k), "round": int(n + 1), "tau": float(result.tau[k, n])}
            for k, n in zip(*np.nonzero(a))]


def write_result(out_dir, result, scenario, scheme: str = "joint", full_trajectory: bool = False,
                 **extra) -> dict:
    """Write summary JSON and CSV tables into ``out_dir``; returns the paths by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": write_json(result_summary(result, scenario, scheme, **extra), out / "result.json"),
        "history": write_rows([{"iteration": i, "completion_time": float(t)} for i, t in enumerate(result.history)],
                              out / "history.csv"),
        "trajectory": write_rows(trajectory_rows(result.trajectory, 1 if full_trajectory else TRAJECTORY_STRIDE),
                                 out / "trajectory.csv", ["round", "x", "y"]),
        "slots": write_rows(slot_rows(result), out / "slots.csv",
                            ["round", "delta", "scheduled", "upload_time", "speed"]),
        "schedule": write_rows(schedule_rows(result), out / "schedule.csv", ["device", "round", "tau"]),
    }
    if result.sched_trace:
        paths["sched_trace"] = write_rows(result.sched_trace, out / "sched_trace.csv")
    if result.traj_trace:
        paths["traj_trace"] = write_rows(result.traj_trace, out / "traj_trace.csv")
    return paths
