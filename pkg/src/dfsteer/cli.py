"""Command line interface.

Subcommands: ``solve``, ``simulate``, ``sweep-eta`` and ``check``.
Exit codes: 0 ok, 1 usage or I/O error, 2 infeasible, 3 no convergence,
4 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import sys
import time
from dataclasses import fields, replace

from . import __version__
from .cs import Precheck, feasibility_precheck, solve_cs
from .errors import ScenarioError
from .moments import predict, stage_moments
from .mvs import min_norm_mean_input, solve_mvs
from .policy import free_gain_count
from .report import Status, ToleranceSet
from .scenario import dumps, load_policy, load_scenario, scenario_to_dict, solve_report_to_dict
from .simulate import SimConfig, SimMode, simulate_batch, validate, write_trajectories_csv
from .systemmodel import build_stacked

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NO_CONVERGENCE, EXIT_VALIDATION = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tol_flag(name):
    return "--" + (name if name.startswith("tol_") else "tol_" + name).replace("_", "-")


def _add_tolerance_flags(parser):
    group = parser.add_argument_group("tolerance overrides")
    for f in fields(ToleranceSet):
        kind = int if f.type in ("int", int) else float
        group.add_argument(_tol_flag(f.name), dest=f"tol__{f.name}", type=kind, metavar="V")


def _tolerances(scenario, args) -> ToleranceSet:
    overrides = {
        key[len("tol__"):]: value
        for key, value in vars(args).items()
        if key.startswith("tol__") and value is not None
    }
    return replace(scenario.tolerances, **overrides)


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _eta_list(text):
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from None


def build_parser():
    parser = _Parser(prog="dfsteer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the scenario's steering problem and write a JSON report")
    p.add_argument("--scenario", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--eta", type=_positive_int, help="override the truncation length")
    _add_tolerance_flags(p)

    p = sub.add_parser("simulate", help="Monte Carlo validation of a policy against predicted moments")
    p.add_argument("--scenario", required=True, metavar="PATH")
    p.add_argument("--policy", required=True, metavar="PATH", help="solve report or bare policy file")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--samples", type=_positive_int, metavar="N")
    p.add_argument("--seed", type=int, metavar="S")
    p.add_argument("--mode", choices=[m.value for m in SimMode])
    p.add_argument("--tol-sigma", type=float, metavar="K")
    p.add_argument("--csv", metavar="PATH", help="dump sampled trajectories as CSV")
    p.add_argument("--csv-samples", type=_positive_int, default=100, metavar="K",
                   help="number of samples written to --csv (default 100)")

    p = sub.add_parser("sweep-eta", help="solve for several truncation lengths and tabulate")
    p.add_argument("--scenario", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--eta", type=_eta_list, metavar="LIST", help="comma-separated, default 1..T-1")
    _add_tolerance_flags(p)

    p = sub.add_parser("check", help="validate a scenario and run feasibility prechecks")
    p.add_argument("--scenario", required=True, metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="write the canonical scenario and checks here")
    return parser


def _write(path, text):
    try:
        with open(path, "w") as handle:
            handle.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _timestamp():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _solve(scenario, tol):
    sd = build_stacked(scenario.system)
    spec = scenario.problem_spec()
    if scenario.problem == "mvs":
        return solve_mvs(spec, tol, sd), sd
    return solve_cs(spec, tol, sd), sd


def _exit_for(status: Status):
    if status is Status.OPTIMAL:
        return EXIT_OK
    if status.infeasible:
        return EXIT_INFEASIBLE
    return EXIT_NO_CONVERGENCE


def cmd_solve(args):
    scenario = load_scenario(args.scenario)
    if args.eta is not None:
        scenario = scenario.with_eta(None if args.eta >= scenario.system.horizon - 1 else args.eta)
    tol = _tolerances(scenario, args)
    result, sd = _solve(scenario, tol)
    if result.diagnostics.get("precheck", Precheck.PASS.value) != Precheck.PASS.value:
        print(f"warning: feasibility precheck {result.diagnostics['precheck']}", file=sys.stderr)
    prediction = None
    if result.policy is not None:
        pred = predict(sd, result.policy)
        prediction = [stage_moments(pred, t) for t in range(sd.horizon + 1)]
    body = solve_report_to_dict(scenario, result, tol, prediction)
    body["command"] = "solve"
    body["timestamp"] = _timestamp()
    _write(args.out, dumps(body))
    print(f"{result.status.value}: objective={result.objective:.10g}")
    return _exit_for(result.status)


def cmd_simulate(args):
    scenario = load_scenario(args.scenario)
    policy = load_policy(args.policy)
    sys_ = scenario.system
    if (policy.horizon, policy.m, policy.n) != (sys_.horizon, sys_.m, sys_.n):
        raise UsageError(
            f"policy dimensions (T={policy.horizon}, m={policy.m}, n={policy.n}) do not match "
            f"scenario (T={sys_.horizon}, m={sys_.m}, n={sys_.n})"
        )
    settings = scenario.simulation
    cfg = SimConfig(
        num_samples=args.samples if args.samples is not None else settings.samples,
        seed=args.seed if args.seed is not None else settings.seed,
        mode=args.mode if args.mode is not None else settings.mode,
    )
    if not 0 <= cfg.seed < 2**64:
        raise UsageError("--seed must be in [0, 2**64)")
    tol_sigma = args.tol_sigma if args.tol_sigma is not None else settings.tol_sigma
    report = validate(sys_, policy, cfg, tol_sigma)
    emp = report.moments
    body = {
        "command": "simulate",
        "timestamp": _timestamp(),
        "scenario": scenario_to_dict(scenario),
        "simulation": {"samples": cfg.num_samples, "seed": cfg.seed, "mode": cfg.mode.value, "tol_sigma": tol_sigma},
        "empirical": {
            "mean_hat": emp.mean_hat,
            "cov_hat": emp.cov_hat,
            "effort_hat": emp.effort_hat,
            "stderr_mean": emp.stderr_mean,
            "effort_stderr": emp.effort_stderr,
            "num_samples": emp.num_samples,
        },
        "validation": {
            "passed": report.passed,
            "checks": [
                {"name": c.name, "predicted": c.predicted, "empirical": c.empirical,
                 "stderr": c.stderr, "z_score": c.z_score, "passed": c.passed}
                for c in report.checks
            ],
        },
    }
    _write(args.out, dumps(body))
    if args.csv:
        count = min(args.csv_samples, cfg.num_samples)
        states, inputs, _ = simulate_batch(sys_, policy, cfg, 0, count)
        write_trajectories_csv(args.csv, states, inputs)
    for c in report.failures():
        print(f"FAIL {c.name}: predicted={c.predicted:.6g} empirical={c.empirical:.6g} z={c.z_score:.2f}",
              file=sys.stderr)
    print("validation " + ("passed" if report.passed else "failed"))
    return EXIT_OK if report.passed else EXIT_VALIDATION


def sweep_eta(scenario, etas, tol):
    """Rows ``(eta, objective, solve_wall_time_ms, iterations, free_gain_count, status)``."""
    horizon = scenario.system.horizon
    rows = []
    for eta in etas:
        if not 1 <= eta <= horizon - 1:
            raise UsageError(f"eta={eta} outside [1, {horizon - 1}]")
        start = time.perf_counter()
        result, _ = _solve(scenario.with_eta(None if eta >= horizon - 1 else eta), tol)
        elapsed = (time.perf_counter() - start) * 1e3
        rows.append({
            "eta": eta,
            "objective": result.objective,
            "solve_wall_time_ms": elapsed,
            "iterations": result.iterations,
            "free_gain_count": free_gain_count(horizon, scenario.system.m, scenario.system.n, eta),
            "status": result.status.value,
        })
    return rows


def cmd_sweep_eta(args):
    scenario = load_scenario(args.scenario)
    horizon = scenario.system.horizon
    etas = args.eta if args.eta else list(range(1, horizon))
    if not etas:
        raise UsageError("horizon 1 has no truncation lengths to sweep")
    rows = sweep_eta(scenario, etas, _tolerances(scenario, args))
    header = ["eta", "objective", "solve_wall_time_ms", "iterations", "free_gain_count", "status"]
    try:
        with open(args.out, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=header)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc.strerror}") from None
    statuses = [Status(r["status"]) for r in rows]
    if any(s.infeasible for s in statuses):
        return EXIT_INFEASIBLE
    if any(s is not Status.OPTIMAL for s in statuses):
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_check(args):
    scenario = load_scenario(args.scenario)
    sd = build_stacked(scenario.system)
    tol = scenario.tolerances
    _, residual, mean_ok = min_norm_mean_input(sd, scenario.mu_f, tol=tol)
    checks = {"mean_reachable": mean_ok, "mean_residual_norm": residual}
    if scenario.problem == "cs":
        checks["precheck"] = feasibility_precheck(scenario.problem_spec(), tol, sd).value
    body = {"scenario": scenario_to_dict(scenario), "checks": checks}
    text = dumps(body)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    feasible = mean_ok and checks.get("precheck", "pass") == "pass"
    return EXIT_OK if feasible else EXIT_INFEASIBLE


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep-eta": cmd_sweep_eta, "check": cmd_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
