"""Command-line front end: certificates, batch verification, traces.

Exit codes: 0 all requested checks pass; 1 a verified failure or a
hypothesis refusal; 2 malformed flags or configuration; 3 runtime
evaluation failure.  Outputs are byte-identical for identical inputs and
seeds.  ``PHISOB_THREADS`` caps worker parallelism; evaluation is
currently sequential, which satisfies any cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .phi_core import IntervalGrid, check_all
from .measures import (
    EvaluationError, Gaussian, Plan, PlanError, PoissonLaw,
    exponential_field, field_from_scalar, linear_field, trig_field,
)
from .functionals import phi_entropy
from .semigroups import Heat, OrnsteinUhlenbeck, PoissonSemigroup, decay_rate
from .concentration import herbst_gaussian_tail
from .maxent import MaxentError, MaxentProblem, solve_maxent
from .verify import HypothesisRefused
from .config import ConfigError, load_config, parse_phi, run_entry

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_RUNTIME = 3


def _threads_cap() -> int:
    raw = os.environ.get("PHISOB_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ConfigError(f"PHISOB_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ConfigError("PHISOB_THREADS must be at least 1")
    return cap


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            _fmt(row[h]) if isinstance(row[h], (int, float, np.floating)) and
            not isinstance(row[h], bool) else str(row[h])
            for h in header))
    path.write_text("\n".join(lines) + "\n")


def _phi_from_args(args) -> "PhiFunction":
    spec = {"kind": args.kind}
    if args.p is not None:
        spec["p"] = args.p
    if args.qa is not None:
        spec.update(a=args.qa, b=args.qb, c=args.qc)
    return parse_phi(spec, "phi flags")


def cmd_check_phi(args) -> int:
    phi = _phi_from_args(args)
    grid = None
    if args.grid_lo is not None and args.grid_hi is not None:
        grid = IntervalGrid(args.grid_lo, args.grid_hi, args.grid_n,
                            log_scaled=not args.linear_grid)
    reports = check_all(phi, grid)
    wanted = args.hypotheses.split(",") if args.hypotheses else list(reports)
    ok = True
    for name in wanted:
        if name not in reports:
            raise ConfigError(f"unknown hypothesis {name!r}")
        rep = reports[name]
        ok = ok and rep.holds
        if args.format == "json":
            print(rep.to_json())
        else:
            print(f"{phi.name} {name}: holds={rep.holds} margin={rep.margin:.6e} "
                  f"witness={rep.witness}")
    return EXIT_OK if ok else EXIT_FAIL


def _field_from_args(args):
    coeffs = [args.theta]
    if args.f == "linear":
        return linear_field(coeffs, args.f_offset)
    if args.f == "exponential":
        return exponential_field(coeffs, args.f_offset)
    if args.f == "trigonometric":
        return trig_field(coeffs, offset=args.f_offset)
    raise ConfigError(f"unknown function family {args.f!r}")


def cmd_entropy(args) -> int:
    phi = _phi_from_args(args)
    if args.measure == "gaussian":
        mu = Gaussian([args.mean], [[args.var]])
        plan = Plan.gauss_hermite(args.order)
    elif args.measure == "poisson":
        mu = PoissonLaw(args.rate)
        plan = Plan.poisson_sum()
    else:
        raise ConfigError(f"unknown measure {args.measure!r}")
    value = phi_entropy(phi, mu, _field_from_args(args), plan)
    print(value.to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, payload = [], []
    any_fail = False
    for entry in cfg.inequalities:
        try:
            rep = run_entry(entry, cfg.seed)
        except HypothesisRefused as exc:
            any_fail = True
            rows.append({"name": entry.name, "lhs": float("nan"),
                         "rhs": float("nan"), "constant": float("nan"),
                         "deficit": float("nan"), "pass": False})
            payload.append({"name": entry.name, "refused": str(exc)})
            continue
        except ConfigError:
            raise
        except (EvaluationError, PlanError, ValueError) as exc:
            print(f"error evaluating {entry.name!r}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        row = rep.row()
        row["name"] = entry.name
        rows.append(row)
        rec = json.loads(rep.to_json())
        rec["name"] = entry.name
        payload.append(rec)
        any_fail = any_fail or not rep.passed
    _write_csv(out_dir / "deficits.csv",
               ["name", "lhs", "rhs", "constant", "deficit", "pass"], rows)
    (out_dir / "deficits.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    for row in rows:
        print(f"{row['name']}: deficit={row['deficit']} pass={row['pass']}")
    return EXIT_FAIL if any_fail else EXIT_OK


def cmd_decay(args) -> int:
    if args.sg == "ou":
        sg = OrnsteinUhlenbeck(args.rho)
    elif args.sg == "heat":
        sg = Heat()
    elif args.sg == "poisson":
        sg = PoissonSemigroup(args.rho)
    else:
        raise ConfigError(f"unknown semigroup {args.sg!r}")
    phi = _phi_from_args(args)
    f = _field_from_args(args)
    times = np.linspace(0.0, args.t_max, args.steps)
    trace = decay_rate(sg, phi, f, times, Plan.gauss_hermite(args.order))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "decay.csv", ["t", "entropy", "envelope"], trace.rows())
    print(f"fitted_rate={trace.fitted_rate!r} monotone={trace.monotone} "
          f"degenerate={trace.degenerate}")
    return EXIT_OK if trace.monotone else EXIT_FAIL


def cmd_tail(args) -> int:
    if args.F != "identity":
        raise ConfigError("only the identity statistic is wired to flags")
    F = linear_field([1.0])
    mu = Gaussian([0.0], [[1.0]])
    grid = np.arange(0.0, args.t_max + 1e-9, args.t_step)
    rep = herbst_gaussian_tail(args.c, F, mu, grid, n=args.n, seed=args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "tail.csv", ["t", "bound", "empirical", "stderr"], rep.rows())
    print(f"dominated={rep.dominated}")
    return EXIT_OK if rep.dominated else EXIT_FAIL


def cmd_maxent(args) -> int:
    phi = _phi_from_args(args)
    if args.W == "square":
        W = field_from_scalar(lambda x: x ** 2, name="x^2")
    elif args.W == "linear":
        W = field_from_scalar(lambda x: x, name="x")
    else:
        raise ConfigError(f"unknown statistic {args.W!r}")
    prob = MaxentProblem(phi, W, args.c, np.linspace(args.grid_lo, args.grid_hi,
                                                     args.grid_n))
    sol = solve_maxent(prob)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "maxent.csv", ["x", "density"], sol.rows())
    (out / "maxent_trace.json").write_text(
        json.dumps(sol.trace(), sort_keys=True, indent=2) + "\n")
    print(json.dumps(sol.trace(), sort_keys=True))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phisob",
        description="entropy functionals, convexity certificates and "
                    "inequality deficit verification",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--tol", type=float, default=1e-7)
    common.add_argument("--out-dir", default=".")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=lambda **kw: argparse.ArgumentParser(
                                    parents=[common], **kw))

    def add_phi_flags(p, flag="--kind"):
        p.add_argument(flag, dest="kind", required=True,
                       choices=("xlogx", "square", "power", "quadratic"))
        p.add_argument("--p", type=float, default=None)
        p.add_argument("--qa", type=float, default=None)
        p.add_argument("--qb", type=float, default=0.0)
        p.add_argument("--qc", type=float, default=0.0)

    p = sub.add_parser("check-phi", help="run the hypothesis certificates")
    add_phi_flags(p)
    p.add_argument("--grid-lo", type=float, default=None)
    p.add_argument("--grid-hi", type=float, default=None)
    p.add_argument("--grid-n", type=int, default=201)
    p.add_argument("--linear-grid", action="store_true")
    p.add_argument("--hypotheses", default="")
    p.set_defaults(func=cmd_check_phi)

    p = sub.add_parser("entropy", help="evaluate one entropy functional")
    add_phi_flags(p)
    p.add_argument("--measure", choices=("gaussian", "poisson"), default="gaussian")
    p.add_argument("--mean", type=float, default=0.0)
    p.add_argument("--var", type=float, default=1.0)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--f", choices=("linear", "exponential", "trigonometric"),
                   default="linear")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--f-offset", type=float, default=0.0)
    p.add_argument("--order", type=int, default=40)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("verify", help="run a batch of configured inequalities")
    p.add_argument("config")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decay", help="entropy decay trace along a flow")
    p.add_argument("--sg", choices=("ou", "heat", "poisson"), default="ou")
    p.add_argument("--rho", type=float, default=1.0)
    add_phi_flags(p, "--phi")
    p.add_argument("--f", choices=("linear", "exponential", "trigonometric"),
                   default="linear")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--f-offset", type=float, default=0.0)
    p.add_argument("--t-max", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=9)
    p.add_argument("--order", type=int, default=40)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("tail", help="sub-Gaussian tail bound against samples")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--F", default="identity")
    p.add_argument("--n", type=int, default=1_000_000)
    p.add_argument("--t-max", type=float, default=4.0)
    p.add_argument("--t-step", type=float, default=0.25)
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("maxent", help="constrained maximum-entropy density")
    add_phi_flags(p, "--phi")
    p.add_argument("--W", choices=("square", "linear"), default="square")
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--grid-lo", type=float, default=-5.0)
    p.add_argument("--grid-hi", type=float, default=5.0)
    p.add_argument("--grid-n", type=int, default=2001)
    p.set_defaults(func=cmd_maxent)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code not in (0, None) else EXIT_OK
    try:
        _threads_cap()
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except HypothesisRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (EvaluationError, PlanError, MaxentError, RuntimeError) as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
