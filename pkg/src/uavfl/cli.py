"""Command-line driver.

Subcommands: gen, feascheck, solve, baseline, sweep, flsim. Failures print a
one-line JSON object ``{"error": <category>, "message": ...}`` on stderr and
exit with the category's code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import fl_sim, plotting
from .baselines import SchemeId, run_scheme
from .convergence import check_feasibility, convergence_bound
from .errors import InfeasibleError, NonConvergenceError, SolverError
from .results import write_json, write_result, write_rows
from .scenario import ConfigError, dump_scenario, generate_scenario, load_scenario, scenario_hash

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INFEASIBLE = 4
EXIT_NONCONVERGENCE = 5

CATEGORIES = {
    EXIT_SOLVER: "solver",
    EXIT_USAGE: "usage",
    EXIT_CONFIG: "config",
    EXIT_INFEASIBLE: "infeasible",
    EXIT_NONCONVERGENCE: "non-convergence",
}

log = logging.getLogger("uavfl")


class CliError(Exception):
    def __init__(self, code: int, message: str, details=None):
        super().__init__(message)
        self.code = code
        self.details = details


class _Parser(argparse.ArgumentParser):
    """Argument errors also emit the JSON error line."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(json.dumps({"error": CATEGORIES[EXIT_USAGE], "exit_code": EXIT_USAGE, "message": message}),
              file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _schemes(text: str) -> list[SchemeId]:
    if text == "all":
        return list(SchemeId)
    try:
        return [SchemeId.parse(x.strip()) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, NonConvergenceError):
        return EXIT_NONCONVERGENCE
    return EXIT_SOLVER


# --- scenario handling -------------------------------------------------------


def _base_scenario(args):
    if args.scenario:
        sc = load_scenario(args.scenario)
    else:
        sc = generate_scenario(args.seed, args.K, args.scale)
    changes = {}
    if args.max_outer is not None:
        changes["max_outer"] = args.max_outer
    if args.trace:
        changes["trace"] = True
    if changes:
        try:
            sc = sc.with_options(**changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return sc


def _single(values, name):
    if values is None:
        return None
    if len(values) != 1:
        raise ConfigError(f"--{name} takes a single value for this subcommand")
    return values[0]


def _apply(sc, epsilon=None, energy=None):
    try:
        if epsilon is not None:
            sc = sc.with_epsilon(epsilon)
        if energy is not None:
            sc = sc.with_energy(energy)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return sc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -------------------------------------------------------------


def cmd_gen(args) -> int:
    sc = generate_scenario(args.seed, args.K, args.scale)
    sc = _apply(sc, _single(args.epsilon, "epsilon"), _single(args.energy, "energy"))
    path = dump_scenario(sc, _out_dir(args) / "scenario.json")
    print(json.dumps({"scenario": str(path), "scenario_hash": scenario_hash(sc)}))
    return EXIT_OK


def cmd_feascheck(args) -> int:
    base = _base_scenario(args)
    eps_list = args.epsilon or [base.fl.accuracy_target]
    rows = []
    for eps in eps_list:
        sc = _apply(base, eps, _single(args.energy, "energy"))
        report = check_feasibility(sc)
        full = convergence_bound(sc.fl, sc.devices, np.ones((sc.K, sc.N)))
        rows.append({"epsilon": eps, "full_participation_bound": full, **report.to_dict()})
    if args.out:
        out = _out_dir(args)
        write_json({"scenario_hash": scenario_hash(base), "seed": base.seed, "checks": rows},
                   out / "feasibility.json")
    print(json.dumps(rows))
    bad = [r for r in rows if not r["feasible"]]
    if bad:
        reasons = sorted({x for r in bad for x in r["reasons"]})
        raise CliError(EXIT_INFEASIBLE, "; ".join(reasons), {"reasons": reasons})
    return EXIT_OK


def _report(result, sc, out, scheme, full_trajectory, plots):
    paths = write_result(out, result, sc, scheme, full_trajectory)
    if plots:
        plotting.plot_trajectory(result, sc, out / "trajectory.png")
        plotting.plot_history(result.history, out / "history.png")
        plotting.plot_schedule(result.schedule, out / "schedule.png")
    return paths


def cmd_solve(args) -> int:
    sc = _apply(_base_scenario(args), _single(args.epsilon, "epsilon"), _single(args.energy, "energy"))
    scheme = args.scheme[0] if args.scheme else SchemeId.JOINT
    result = run_scheme(scheme, sc)
    out = _out_dir(args)
    _report(result, sc, out, scheme.value, args.full_trajectory, not args.no_plots)
    print(json.dumps({"scheme": scheme.value, "completion_time": result.completion_time,
                      "converged": result.converged, "out": str(out)}))
    return EXIT_OK


def cmd_baseline(args) -> int:
    base = _base_scenario(args)
    schemes = args.scheme or list(SchemeId)
    energies = args.energy or [None]
    eps = _single(args.epsilon, "epsilon")
    out = _out_dir(args)
    rows = []
    for e in energies:
        sc = _apply(base, eps, e)
        for scheme in schemes:
            result = run_scheme(scheme, sc)
            sub = out / (scheme.value if e is None else f"{scheme.value}_E{e:g}")
            _report(result, sc, sub, scheme.value, args.full_trajectory, not args.no_plots)
            rows.append({"scheme": scheme.value, "energy": sc.devices[0].energy_budget,
                         "epsilon": sc.fl.accuracy_target, "completion_time": result.completion_time,
                         "converged": result.converged, "scheduled_fraction": result.scheduled_fraction})
    write_rows(rows, out / "schemes.csv")
    if not args.no_plots:
        plotting.plot_schemes(rows, out / "schemes.png")
    print(json.dumps(rows))
    return EXIT_OK


def _sweep_job(job):
    """One isolated sweep point; runs in a worker process."""
    sc, scheme, eps, energy = job
    row = {"scheme": scheme.value, "epsilon": eps, "energy": energy}
    try:
        r = run_scheme(scheme, _apply(sc, eps, energy))
        row.update(completion_time=r.completion_time, converged=r.converged, iterations=r.iterations,
                   status="ok")
    except (SolverError, ConfigError) as exc:
        row.update(completion_time=None, converged=False, iterations=0, status=CATEGORIES[_code_for(exc)],
                   message=str(exc))
    return row


def cmd_sweep(args) -> int:
    base = _base_scenario(args)
    schemes = args.scheme or [SchemeId.JOINT]
    eps_list = args.epsilon or [base.fl.accuracy_target]
    energies = args.energy or [base.devices[0].energy_budget]
    jobs = [(base, s, float(eps), float(e)) for s in schemes for e in energies for eps in eps_list]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    out = _out_dir(args)
    write_rows(rows, out / "sweep.csv",
               ["scheme", "energy", "epsilon", "completion_time", "converged", "iterations", "status", "message"])
    write_json({"scenario_hash": scenario_hash(base), "seed": base.seed, "options": base.options.to_dict(),
                "rows": rows}, out / "sweep.json")
    if not args.no_plots:
        plotting.plot_sweep(rows, out / "sweep.png")
    print(json.dumps(rows))
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        code = {v: k for k, v in CATEGORIES.items()}[failed[0]["status"]]
        raise CliError(code, f"{len(failed)} of {len(rows)} sweep points failed", {"failed": failed})
    return EXIT_OK


def cmd_flsim(args) -> int:
    base = _apply(_base_scenario(args), None, _single(args.energy, "energy"))
    sizes = [d.dataset_size for d in base.devices]
    data = fl_sim.generate_synthetic(args.seed, base.K, args.classes, args.dim, sizes)
    kappa = fl_sim.calibrate_kappa(data, args.eta, base.N)
    sc = fl_sim.scenario_for_dataset(base, data, args.eta, kappa, _single(args.epsilon, "epsilon"))
    scheme = args.scheme[0] if args.scheme else SchemeId.JOINT
    result = run_scheme(scheme, sc)
    out = _out_dir(args)
    rng = np.random.default_rng(args.seed)
    runs = [("optimized", result.schedule)]
    runs += [(f"random{i}", (rng.random(result.schedule.shape) < 0.5).astype(np.int8))
             for i in range(args.random_schedules)]
    rows = []
    for name, A in runs:
        run = fl_sim.run_fl(data, A, args.eta, args.aggregation)
        bound = fl_sim.bound_for_run(run, data, A, args.eta)
        run.bound = bound
        run.write_csv(out / f"fl_{name}.csv")
        if not args.no_plots:
            plotting.plot_fl(run, out / f"fl_{name}.png", bound)
        if run.kappa > kappa:
            log.warning("measured gradient bound %.4g exceeds the configured %.4g (%s)", run.kappa, kappa, name)
        rows.append({"schedule": name, "avg_grad_sq": run.avg_grad_sq, "bound": bound, "kappa_measured": run.kappa,
                     "kappa_configured": kappa, "final_loss": run.final_loss, "bound_holds": bool(run.avg_grad_sq <= bound)})
    write_rows(rows, out / "fl_summary.csv")
    write_json({"scenario_hash": scenario_hash(sc), "seed": args.seed, "options": sc.options.to_dict(),
                "eta": args.eta, "aggregation": args.aggregation, "epsilon": sc.fl.accuracy_target,
                "completion_time": result.completion_time, "runs": rows}, out / "fl_summary.json")
    print(json.dumps(rows))
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "feascheck": cmd_feascheck,
    "solve": cmd_solve,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "flsim": cmd_flsim,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", metavar="PATH", help="scenario JSON; generated from --seed/--K otherwise")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--K", type=int, default=10, help="devices when generating (default 10)")
    common.add_argument("--scale", type=float, default=0.05, help="desk scale when generating (default 0.05)")
    common.add_argument("--epsilon", type=_floats, metavar="LIST", help="accuracy target(s), comma separated")
    common.add_argument("--energy", type=_floats, metavar="LIST", help="per-device energy budget(s) in J")
    common.add_argument("--scheme", type=_schemes, metavar="NAME",
                        help="joint, static_uav, static_uav_hs, full_scheduling, a comma list or 'all'")
    common.add_argument("--max-outer", type=int, metavar="INT", help="cap on outer iterations")
    common.add_argument("--trace", action="store_true", help="write per-iteration solver traces")
    common.add_argument("--full-trajectory", action="store_true", help="export every waypoint, not every 5th")
    common.add_argument("--no-plots", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="uavfl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen", parents=[common], help="write a generated scenario file")
    sub.add_parser("feascheck", parents=[common], help="accuracy and energy feasibility report")
    sub.add_parser("solve", parents=[common], help="solve one scenario")
    sub.add_parser("baseline", parents=[common], help="compare schemes")
    sw = sub.add_parser("sweep", parents=[common], help="grid over epsilon, energy and scheme")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    fl = sub.add_parser("flsim", parents=[common], help="train under the optimized and random schedules")
    fl.add_argument("--eta", type=float, default=0.01)
    fl.add_argument("--dim", type=int, default=64)
    fl.add_argument("--classes", type=int, default=10)
    fl.add_argument("--random-schedules", type=int, default=5)
    fl.add_argument("--aggregation", choices=["weighted", "unweighted"], default="weighted")
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        code, msg, details = exc.code, str(exc), exc.details
    except (ConfigError, SolverError) as exc:
        code, msg = _code_for(exc), str(exc)
        report = getattr(exc, "report", None)
        details = {"reasons": report.reasons} if report is not None else None
    except ValueError as exc:
        code, msg, details = EXIT_CONFIG, str(exc), None
    err = {"error": CATEGORIES[code], "exit_code": code, "message": msg}
    if details:
        err["details"] = details
    print(json.dumps(err, default=str), file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
