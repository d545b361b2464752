"""Command-line driver: validate, simulate, bounds, reproduce-paper.

Exit codes: 0 success (possibly with warnings), 1 validation failure,
2 runtime failure. Errors print one machine-greppable line to stderr with
the prefix "nonbayes: error:". Worker count comes from NONBAYES_THREADS
unless a scenario is small enough not to care.
"""

from __future__ import annotations

import argparse
import json
import sys

from .graph import GraphError
from .kernels import backend
from .scenario import Scenario, ScenarioError, parse_scenario
from .theory import TheoryError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _fail(message: str, code: int) -> int:
    print(f"nonbayes: error: {message}", file=sys.stderr)
    return code


def _warn(message: str) -> None:
    print(f"nonbayes: warning: {message}", file=sys.stderr)


def _load(path: str) -> Scenario:
    return parse_scenario(path)


def _print_validation(scenario: Scenario) -> None:
    v = scenario.validation
    sets = v.optimal_sets
    print(f"scenario: {scenario.name} (hash {scenario.scenario_hash()[:12]})")
    print(f"agents: {scenario.model.n}, hypotheses: {scenario.model.m}, "
          f"alpha = {scenario.model.alpha:.6g}")
    print(f"graph: {scenario.schedule.period}-step cycle, class "
          f"{scenario.schedule.matrix_class}, eta = {scenario.schedule.declared_eta:.6g}, "
          f"B = {scenario.schedule.declared_B}")
    for i, s in enumerate(sets.per_agent):
        print(f"  best hypotheses for agent {i + 1}: {sorted(map(str, s))}")
    print(f"  common optimal set: {sorted(map(str, sets.common))}")
    report = v.graph_report
    print(f"graph contract over {report.horizon} steps: "
          f"{'all checks pass' if report.ok else f'{len(report.issues)} violation(s)'}")
    for issue in report.issues:
        print(f"  VIOLATION {json.dumps(issue.as_dict())}")
    for w in v.warnings:
        _warn(w)


def cmd_validate(args) -> int:
    try:
        scenario = _load(args.scenario)
    except (ScenarioError, TheoryError, GraphError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    _print_validation(scenario)
    return EXIT_OK if scenario.validation.ok else EXIT_VALIDATION


def _run_overrides(args) -> dict:
    return {
        "trials": args.trials,
        "steps": args.steps,
        "master_seed": args.seed,
        "rho_list": tuple(args.rho) if args.rho else None,
        "record_every": args.record_every,
    }


def cmd_simulate(args) -> int:
    try:
        scenario = _load(args.scenario)
    except (ScenarioError, TheoryError, GraphError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    if not scenario.validation.ok:
        _print_validation(scenario)
        return _fail("scenario fails the graph contract; not simulating", EXIT_VALIDATION)
    for w in scenario.validation.warnings:
        _warn(w)
    from . import experiment

    try:
        result = experiment.run_artifacts(scenario, args.out, **_run_overrides(args))
    except Exception as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    summary = result["summary"]
    print(f"simulated {summary.trials} trials x {summary.K} steps "
          f"({backend()} kernel); artifacts in {args.out}")
    compliance = result["compliance"]
    if compliance is None:
        _warn("no certificate for this scenario; wrote summary.csv only")
    else:
        insufficient = compliance["horizon_insufficient"]
        if insufficient:
            _warn(
                "horizon insufficient for rho in {" + ", ".join(insufficient) + "}; "
                "their compliance sections are marked accordingly"
            )
        print(f"compliance pass: {compliance['pass']}")
    if args.save_trajectories:
        from dataclasses import replace
        from .learning import derive_trial_seed, run_trial, write_trajectory_csv
        import os

        records = []
        for t in range(min(args.save_trajectories, summary.trials)):
            rec = run_trial(
                scenario, derive_trial_seed(summary.master_seed, t), summary.K,
                summary.record_every,
            )
            records.append(replace(rec, trial=t))
        written = write_trajectory_csv(
            records,
            os.path.join(args.out, "trajectories.csv"),
            per_trial=args.split_trajectories,
        )
        print(f"wrote {len(written)} trajectory file(s)")
    return EXIT_OK


def cmd_bounds(args) -> int:
    try:
        scenario = _load(args.scenario)
    except (ScenarioError, TheoryError, GraphError) as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    if not scenario.validation.ok:
        return _fail("scenario fails the graph contract", EXIT_VALIDATION)
    from . import experiment
    from .theory import bound_curve

    try:
        rho_list = tuple(args.rho) if args.rho else None
        cert = experiment.build_scenario_certificate(scenario, rho_list)
    except TheoryError as exc:
        return _fail(str(exc), EXIT_VALIDATION)
    except Exception as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    import os

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "certificate.json")
    experiment.write_certificate_json(cert, path)
    print(f"rate certificate ({scenario.name}, hash {scenario.scenario_hash()[:12]})")
    print(f"  matrix class {cert.matrix_class}: C = {cert.C:.6g}, "
          f"lambda = {cert.lam:.12g}")
    print(f"  delta = {cert.delta:.12g} ({cert.delta_source}; bound {cert.delta_bound:.6g}, "
          f"measured {cert.delta_empirical})")
    print(f"  alpha = {cert.alpha:.6g}, gamma1 = {cert.gamma1:.12g}, "
          f"gamma2 = {cert.gamma2:.12g}")
    for theta, h in sorted(cert.H_vectors.items(), key=lambda kv: str(kv[0])):
        print(f"  ||H({theta})||_1 = {float(abs(h).sum()):.12g}")
    for rho, n in sorted(cert.N_of_rho.items()):
        print(f"  N({rho:g}) = {n}")
    crossover = 2.0 * cert.gamma1 / cert.gamma2 if cert.gamma2 > 0 else float("inf")
    print(f"  envelope informative (below 1) after k > {crossover:.6g}; "
          f"bound at that k is {bound_curve(cert, max(0, int(crossover) + 1)):.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    from . import experiment

    try:
        result = experiment.reproduce_paper(args.out, **_run_overrides(args))
    except Exception as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    compliance = result["compliance"]
    print(f"reproduction artifacts in {args.out} ({backend()} kernel)")
    if compliance["horizon_insufficient"]:
        _warn("horizon insufficient for rho in {"
              + ", ".join(compliance["horizon_insufficient"]) + "}")
    print(f"compliance pass: {compliance['pass']}")
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--trials", type=int, default=None, help="number of Monte Carlo trials")
    p.add_argument("--steps", type=int, default=None, help="steps per trial (K)")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument(
        "--rho", type=float, action="append", default=None,
        help="confidence level for the envelope check (repeatable)",
    )
    p.add_argument("--record-every", type=int, default=None, help="recording cadence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nonbayes",
        description="Distributed non-Bayesian learning: simulation, certificates, verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run the scenario validators and print the report")
    p.add_argument("scenario", help="scenario YAML path or the builtin name paper-fig1")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="Monte Carlo run with the full artifact set")
    p.add_argument("scenario", help="scenario YAML path or the builtin name paper-fig1")
    _add_run_flags(p)
    p.add_argument(
        "--save-trajectories", type=int, default=0, metavar="N",
        help="also write the first N per-trial trajectories as CSV",
    )
    p.add_argument(
        "--split-trajectories", action="store_true",
        help="one trajectory file per trial instead of one combined file",
    )
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bounds", help="compute and write the rate certificate (no simulation)")
    p.add_argument("scenario", help="scenario YAML path or the builtin name paper-fig1")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("--rho", type=float, action="append", default=None,
                   help="confidence level (repeatable)")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("reproduce-paper", help="run the builtin reproduction scenario")
    _add_run_flags(p)
    p.set_defaults(func=cmd_reproduce)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return _fail("interrupted", EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
