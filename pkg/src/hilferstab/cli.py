"""Command-line entry point: ``hilferstab {run,solve,check,extend,verify-ops}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_problem
from .runner import (
    DEFAULT_OUT,
    OUT_ENV,
    Action,
    PerturbationKind,
    PerturbationSpec,
    Scenario,
    emit_summary,
    load_scenarios,
    run_all,
)
from .model import validate_problem

_CHECKS = {
    "uhr": Action.CHECK_UHR,
    "semi-uhr": Action.CHECK_SEMI_UHR,
    "uh": Action.CHECK_UH,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--mesh", type=int, metavar="N", help="number of mesh intervals")
    p.add_argument("--grading", type=float, metavar="r", help="mesh grading exponent (default min(2/γ, 4))")
    p.add_argument("--tol", type=float, help="solver tolerance in the Bielecki distance")
    p.add_argument("--seed", type=int, help="seed for Lipschitz sampling and perturbations")
    p.add_argument("--out", type=Path, metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--workers", type=int, default=1, metavar="K", help="scenarios run in parallel")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hilferstab",
        description="ψ-Hilfer delay integro-differential equations: solve and check Ulam-Hyers stability.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every scenario of a scenario file")
    p.add_argument("scenarios", type=Path)
    _common(p)

    p = sub.add_parser("solve", help="solve one problem file by Picard iteration")
    p.add_argument("problem", type=Path)
    _common(p)

    p = sub.add_parser("check", help="stability check of random perturbations for one problem file")
    p.add_argument("problem", type=Path)
    p.add_argument("--kind", choices=sorted(_CHECKS), default="uhr")
    p.add_argument("--theta", type=float, help="constant residual envelope (semi-uhr, uh)")
    p.add_argument("--count", type=int, default=10, help="number of perturbations")
    _common(p)

    p = sub.add_parser("extend", help="half-line solution on [a, a+n] for n = 1..n_max")
    p.add_argument("problem", type=Path)
    p.add_argument("--n-max", type=int, default=3)
    p.add_argument("--per-unit", type=int, default=64, help="mesh intervals per unit length")
    _common(p)

    p = sub.add_parser("verify-ops", help="refinement sweep of the operator identities")
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    _common(p)
    return parser


def _overrides(args) -> dict:
    return {"mesh_n": args.mesh, "grading": args.grading, "tol": args.tol, "seed": args.seed}


def _single(args) -> Scenario:
    from dataclasses import replace

    if args.command == "verify-ops":
        sc = Scenario("verify-ops", Action.VERIFY_OPERATORS, verify_sizes=tuple(args.sizes))
        return replace(sc, **{k: v for k, v in _overrides(args).items() if v is not None})
    problem = load_problem(args.problem)
    name = args.problem.stem
    kwargs = {k: v for k, v in _overrides(args).items() if v is not None}
    if args.command == "solve":
        sc = Scenario(name, Action.SOLVE, problem, **kwargs)
    elif args.command == "check":
        action = _CHECKS[args.kind]
        seed = kwargs.get("seed", 0)
        if action is Action.CHECK_UHR:
            pert = PerturbationSpec(PerturbationKind.SIGMA_BOUNDED, seed=seed)
        else:
            if args.theta is None or not args.theta > 0:
                raise ConfigError(f"--theta > 0 is required for --kind {args.kind}")
            pert = PerturbationSpec(PerturbationKind.THETA_BOUNDED, theta=args.theta, seed=seed)
        sc = Scenario(name, action, problem, perturbation=pert, count=args.count, theta=args.theta, **kwargs)
    else:
        pert = PerturbationSpec(PerturbationKind.SIGMA_BOUNDED, seed=kwargs.get("seed", 0))
        sc = Scenario(
            name, Action.EXTEND_HALFLINE, problem, perturbation=pert, n_max=args.n_max, per_unit=args.per_unit, **kwargs
        )
    if problem.half_line != (sc.action is Action.EXTEND_HALFLINE):
        raise ConfigError("use 'extend' for problems on [a, ∞) and a finite interval otherwise")
    if sc.action is Action.EXTEND_HALFLINE:
        from .runner import _validation_nodes

        nodes = _validation_nodes(sc)
    else:
        nodes = sc.mesh().nodes
    diags = validate_problem(problem, nodes)
    if diags:
        raise ConfigError("invalid problem:\n  " + "\n  ".join(d.message for d in diags), str(args.problem))
    return sc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    try:
        if args.command == "run":
            scenarios = load_scenarios(args.scenarios, _overrides(args))
            if not scenarios:
                print("no scenarios to run", file=sys.stderr)
                return 0
        else:
            scenarios = [_single(args)]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    records = run_all(scenarios, out, workers=args.workers)
    status = emit_summary(records, out)
    print((out / "summary.txt").read_text(encoding="utf-8"), end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
