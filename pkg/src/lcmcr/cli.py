"""Command line interface.

Subcommands: simulate, fit, estimate, df, experiment, validate.  Exit
code 0 on success, 1 on any validation or input problem (including
malformed flags), 2 on numerical failure or, with --strict, a fit that
stopped at max_iter.  All randomness requires an explicit --seed, and
identical invocations write byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .counts import CaptureCounts
from .errors import (
    CapacityError,
    LcmcrError,
    NonIdentifiableError,
    NumericalError,
    UnboundedEstimateError,
    ValidationError,
    Violation,
)
from .experiments import df_family_table, run_critique, run_scenario1
from .fit import FitConfig, FitResult, fit
from .model import DependenceTerm, ModelSpec, ParameterSet, validate, validate_spec
from .popsize import designate_target, estimate_overcoverage, estimate_standard
from .simulate import preset_critique, preset_scenario1, simulate
from .structure import attach_rank, degrees_of_freedom, jacobian_rank_check

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(Violation("bad-json", f"{path}: {exc}")) from exc


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("LCMCR_THREADS", "")
    if env:
        try:
            value = int(env)
            if value >= 1:
                return value
        except ValueError:
            pass
        logger.warning("ignoring LCMCR_THREADS=%r, expected a positive integer", env)
    return 1


def _comma_floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated float list")


def _comma_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated integer list")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcmcr", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[], help="draw a synthetic population")
    p.add_argument("--preset", choices=["scenario1", "critique"], required=True)
    p.add_argument("--n", type=int, required=True, help="true population size")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="-", help="observed counts CSV (default stdout)")
    p.add_argument("--complete-out", default=None, help="optional complete profile-by-class CSV")
    p.add_argument("--fixed-classes", action="store_true", help="round class sizes instead of drawing them")
    p.add_argument("--cd-interaction", type=float, default=None, help="shared CD log odds effect (scenario1)")
    p.add_argument("--weights", type=_comma_floats, default=None, help="class weights (critique)")
    p.add_argument("--htr-probs", type=_comma_floats, default=None, help="hard-to-reach inclusion probs (critique)")

    p = sub.add_parser("fit", help="fit a model to observed counts")
    p.add_argument("--spec", required=True, help="model spec JSON")
    p.add_argument("--counts", required=True, help="observed counts CSV")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--ipf-tol", type=float, default=1e-10)
    p.add_argument("--ipf-max-iter", type=int, default=500)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default="-", help="fit result JSON (default stdout)")
    p.add_argument("--trace", action="store_true", help="include the log likelihood trace")
    p.add_argument("--force", action="store_true", help="fit even with negative degrees of freedom")
    p.add_argument("--strict", action="store_true", help="exit 2 if the best start did not converge")

    p = sub.add_parser("estimate", help="population totals from a fitted model")
    p.add_argument("--fit", dest="fit_path", default=None, help="fit result JSON from the fit subcommand")
    p.add_argument("--spec", default=None, help="model spec JSON (alternative to --fit)")
    p.add_argument("--params", default=None, help="parameter JSON (alternative to --fit)")
    p.add_argument("--counts", required=True)
    p.add_argument("--rule", default="highest-mean-inclusion",
                   choices=["highest-mean-inclusion", "all", "explicit"])
    p.add_argument("--target", type=_comma_ints, default=None, help="explicit target classes, e.g. 1 or 0,2")
    p.add_argument("--out", default=None, help="optional estimate JSON")

    p = sub.add_parser("df", help="degrees-of-freedom report for a model spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--json", action="store_true", help="print JSON instead of the table")
    p.add_argument("--rank-check", action="store_true", help="numeric Jacobian rank diagnostic")
    p.add_argument("--params", default=None, help="parameter JSON (required for --rank-check)")
    p.add_argument("--points", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("experiment", help="run a packaged experiment")
    p.add_argument("which", choices=["scenario1", "critique", "df-family"])
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", choices=["independence", "shared-cd"], default="independence")
    p.add_argument("--cd-value", type=float, default=None)
    p.add_argument("--weights", type=_comma_floats, default=None, help="critique class weights")
    p.add_argument("--htr-probs", type=_comma_floats, default=None, help="critique hard-to-reach probs")
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default="-", help="report JSON (default stdout)")
    p.add_argument("--csv", default=None, help="optional per-replicate CSV")

    p = sub.add_parser("validate", help="check a spec (and optional params) for violations")
    p.add_argument("--spec", required=True)
    p.add_argument("--params", default=None)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_simulate(args) -> int:
    if args.preset == "scenario1":
        config = preset_scenario1(args.n, args.seed, args.cd_interaction)
    else:
        kwargs = {}
        if args.weights is not None:
            kwargs["class_weights"] = args.weights
        if args.htr_probs is not None:
            kwargs["hard_to_reach_probs"] = args.htr_probs
        config = preset_critique(args.n, args.seed, **kwargs)
    sim = simulate(config, fixed_classes=args.fixed_classes)
    _write_text(args.out, sim.observed_counts.to_csv_text())
    if args.complete_out:
        _write_text(args.complete_out, sim.complete_csv_text())
    logger.info(
        "simulated N=%d -> n=%d observed, true target %d",
        args.n, sim.observed_counts.n, sim.true_target_size,
    )
    return EXIT_OK


def _cmd_fit(args) -> int:
    spec = ModelSpec.from_json_dict(_load_json(args.spec))
    counts = CaptureCounts.read_csv(args.counts, spec.num_registers)
    config = FitConfig(
        seed=args.seed,
        num_starts=args.starts,
        tol=args.tol,
        max_iter=args.max_iter,
        ipf_tol=args.ipf_tol,
        ipf_max_iter=args.ipf_max_iter,
    )
    result = fit(spec, counts, config, force=args.force, threads=_threads(args))
    _write_text(args.out, _json_text(result.to_json_dict(include_trace=args.trace)))
    if args.strict and not result.converged:
        print("error: best start stopped at max_iter without converging", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _load_fitted(args):
    if args.fit_path:
        result = FitResult.from_json_dict(_load_json(args.fit_path))
        return result.spec, result.params, result
    if not (args.spec and args.params):
        raise ValidationError(
            Violation("bad-argument", "estimate needs --fit, or both --spec and --params")
        )
    spec = ModelSpec.from_json_dict(_load_json(args.spec))
    params = ParameterSet.from_json_dict(spec, _load_json(args.params))
    return spec, params, None


def _cmd_estimate(args) -> int:
    spec, params, result = _load_fitted(args)
    counts = CaptureCounts.read_csv(args.counts, spec.num_registers)

    if args.rule == "explicit":
        if args.target is None:
            raise ValidationError(Violation("bad-argument", "--rule explicit needs --target"))
        rule = args.target
    else:
        rule = args.rule
    if result is None:
        # designation only needs spec and params; wrap them for the rule
        result = _shell_result(spec, params)
    target = designate_target(result, rule)

    standard = estimate_standard(spec, params, counts)
    over = estimate_overcoverage(spec, params, counts, target)

    lines = [
        f"{'interpretation':<22}{'total':>14}  target classes",
        f"{'standard (all real)':<22}{standard.total_all_classes:>14.4f}  {','.join(str(i) for i in standard.target_classes)}",
        f"{'overcoverage':<22}{over.total_target_only:>14.4f}  {','.join(str(i) for i in over.target_classes)}",
        "class sizes: " + ", ".join(f"{i}: {s:.4f}" for i, s in enumerate(standard.class_sizes)),
    ]
    print("\n".join(lines))
    if args.out:
        _write_text(args.out, _json_text(over.to_json_dict()))
    return EXIT_OK


def _shell_result(spec, params):
    return FitResult(
        spec=spec, params=params, cond_loglik=0.0, iterations=0, converged=True,
        start_index=0, loglik_trace=(), posteriors={}, structure=degrees_of_freedom(spec),
        aic=0.0, bic=0.0, n_observed=0,
    )


def _cmd_df(args) -> int:
    spec = ModelSpec.from_json_dict(_load_json(args.spec))
    report = degrees_of_freedom(spec)
    if args.rank_check:
        if not args.params:
            raise ValidationError(Violation("bad-argument", "--rank-check needs --params"))
        params = ParameterSet.from_json_dict(spec, _load_json(args.params))
        check = jacobian_rank_check(spec, params, num_points=args.points, seed=args.seed)
        report = attach_rank(report, check)
    if args.json:
        sys.stdout.write(_json_text(report.to_json_dict()))
    else:
        print(f"model                 {spec.notation()}")
        print(f"independent cells     {report.independent_cells}")
        print(f"parameter count       {report.parameter_count}")
        print(f"degrees of freedom    {report.degrees_of_freedom}")
        print(f"flag                  {report.flag}")
        if report.jacobian_rank is not None:
            print(f"jacobian rank         {report.jacobian_rank}")
            print(f"rank deficient        {report.rank_deficient}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    if args.which == "df-family":
        rows = df_family_table()
        text = _json_text({"schema_version": 1, "rows": rows})
        _write_text(args.out, text)
        if args.out != "-":
            for row in rows:
                print(f"{row['model']:<28}params {row['parameter_count']:>3}  "
                      f"df {row['degrees_of_freedom']:>3}  {row['flag']}")
        return EXIT_OK

    if args.seed is None:
        raise ValidationError(
            Violation("bad-argument", f"experiment {args.which} needs --seed")
        )
    template = FitConfig(seed=0, num_starts=args.starts, tol=args.tol, max_iter=args.max_iter)
    threads = _threads(args)
    if args.which == "scenario1":
        report = run_scenario1(
            args.reps, args.n, args.seed,
            fit_config=template, variant=args.variant, cd_value=args.cd_value,
            threads=threads,
        )
    else:
        overrides = {}
        if args.weights is not None:
            overrides["class_weights"] = args.weights
        if args.htr_probs is not None:
            overrides["hard_to_reach_probs"] = args.htr_probs
        report = run_critique(
            args.reps, args.n, args.seed,
            fit_config=template, generating_overrides=overrides or None,
            threads=threads,
        )
    _write_text(args.out, _json_text(report.to_json_dict()))
    if args.csv:
        _write_text(args.csv, report.records_csv_text())
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        raw_spec = _load_json(args.spec)
    except ValidationError as exc:
        for v in exc.violations:
            print(str(v))
        return EXIT_VALIDATION
    try:
        spec = ModelSpec(
            tuple(str(r) for r in raw_spec.get("registers", ())),
            int(raw_spec.get("classes", 0)),
            tuple(
                DependenceTerm(
                    tuple(str(r) for r in t.get("registers", ())),
                    bool(t.get("class_specific", False)),
                )
                for t in raw_spec.get("dependence", [])
            ),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        print(f"spec-bad-json: {exc}")
        return EXIT_VALIDATION
    violations = validate_spec(spec)
    if not violations and args.params:
        try:
            params = ParameterSet.from_json_dict(spec, _load_json(args.params))
            violations = validate(spec, params)
        except ValidationError as exc:
            violations = list(exc.violations)
    if violations:
        for v in violations:
            print(str(v))
        return EXIT_VALIDATION
    print("ok")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "estimate": _cmd_estimate,
    "df": _cmd_df,
    "experiment": _cmd_experiment,
    "validate": _cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, CapacityError, NonIdentifiableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, UnboundedEstimateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LcmcrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
