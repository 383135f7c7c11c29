"""Command-line interface.

Subcommands: fit, optimize, adversarial, simulate, diverge, bound. Every
command writes deterministic primary output (JSON or CSV; floats at 17
significant digits) and, next to any output file, a `<name>.manifest.json`
recording the command, resolved parameters, seed, package version, input
digests, and a timestamp. The manifest is a separate file so the primary
output stays byte-identical across re-runs.

Exit codes: 0 success, 2 validation/input error, 3 numerical error,
4 non-convergence (the result file is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .ascent import (
    OneStepConfig,
    PenaltyConfig,
    TwoStepConfig,
    maximize,
    one_step_estimate,
    solve_profile,
    two_step_estimate,
)
from .dataio import load_dataset
from .design import (
    ProfileDistribution,
    design_from_json,
    design_to_json,
    load_design,
)
from .errors import (
    ConjointOptError,
    InvalidParameterError,
    NumericalError,
    ParseError,
    ValidationError,
)
from .estim import (
    compare_penalties,
    estimate_variance_bound,
    strategic_divergence,
)
from .game import (
    InstitutionSpec,
    deviation_check,
    equilibrium_delta,
    solve_equilibrium,
)
from .infer import delta_method
from .model import FitSpec, fit_outcome_model, load_model, save_model
from .mc import adversarial_study, average_case_study, metrics_csv_text
from .serialize import dump_json, dumps, format_float, sha256_file

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_NONCONVERGED = 4


# ---------------------------------------------------------------------------
# shared plumbing

def _threads_default() -> int:
    env = os.environ.get("CONJOINTOPT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidParameterError(
                "CONJOINTOPT_THREADS must be an integer"
            ) from None
    return os.cpu_count() or 1


def _write_manifest(out_path: str, command: str, params: dict, seed, inputs) -> None:
    manifest = {
        "command": command,
        "config": params,
        "seed": seed,
        "version": __version__,
        "inputs": {p: sha256_file(p) for p in inputs},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    dump_json(manifest, out_path + ".manifest.json")


def _emit(doc, out_path: str | None, command: str, params: dict, seed, inputs) -> None:
    text = dumps(doc) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        _write_manifest(out_path, command, params, seed, inputs)
    else:
        sys.stdout.write(text)


def _dist_doc(pi: ProfileDistribution) -> dict:
    return {
        "design": design_to_json(pi.design),
        "probs": [list(map(float, pi.factor(d))) for d in range(pi.design.n_factors)],
    }


def _load_strategy(path: str) -> ProfileDistribution:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"strategy file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"strategy file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "design" not in doc or "probs" not in doc:
        raise ParseError(f"strategy file {path} needs 'design' and 'probs' keys")
    design = design_from_json(doc["design"])
    return ProfileDistribution(design, tuple(np.asarray(v, float) for v in doc["probs"]))


def _estimate_doc(est, include_trace: bool = False) -> dict:
    doc = {
        "pi": [list(map(float, est.pi_star.factor(d)))
               for d in range(est.pi_star.design.n_factors)],
        "q_value": est.q_value,
        "lambda": est.lam,
        "penalty": est.penalty_kind,
        "method": est.method,
        "converged": est.converged,
        "grad_sup": est.grad_sup,
    }
    if est.se_q is not None:
        doc["se"] = {"q": est.se_q}
        if est.se_pi is not None:
            doc["se"]["pi"] = list(map(float, est.se_pi))
        inf = est.inference
        if inf is not None and hasattr(inf, "ci_q"):
            doc["ci95"] = {"q": list(inf.ci_q)}
        if inf is not None and hasattr(inf, "jacobian_cond"):
            doc["jacobian_condition"] = inf.jacobian_cond
    if include_trace:
        doc["objective_trace"] = list(est.objective_trace)
    return doc


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip() != "")
    except ValueError:
        raise InvalidParameterError(f"{flag} expects comma-separated numbers") from None
    if not vals:
        raise InvalidParameterError(f"{flag} is empty")
    return vals


def _parse_ints(text: str, flag: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _parse_floats(text, flag))


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse once to find --config, seed parser defaults from it, reparse.

    Command-line flags therefore override config-file values, which override
    built-in defaults.
    """
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    found, _ = probe.parse_known_args(argv)
    if found.config:
        try:
            with open(found.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {found.config}") from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise ParseError("config file must hold a JSON object")
        cleaned = {str(k).replace("-", "_"): v for k, v in cfg.items()}
        known = {a.dest for a in parser._actions}
        unknown = set(cleaned) - known
        if unknown:
            raise InvalidParameterError(
                f"config keys not recognized for this command: {sorted(unknown)}"
            )
        parser.set_defaults(**cleaned)
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_fit(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt fit", description="Fit a pairwise-choice outcome model.")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="task CSV file")
    p.add_argument("--design", required=True, help="design JSON file")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--coding", default="sum_to_zero", choices=["sum_to_zero", "baseline"])
    p.add_argument("--vcov", default="respondent_cluster", choices=["iid", "respondent_cluster"])
    p.add_argument("--group", default=None)
    p.add_argument("--stage", default=None)
    p.add_argument("--no-interactions", action="store_true")
    args = _apply_config(p, argv)
    design = load_design(args.design)
    data = load_dataset(args.data, design)
    spec = FitSpec(
        coding=args.coding,
        vcov=args.vcov,
        group=args.group,
        stage=args.stage,
        interactions=not args.no_interactions,
    )
    model = fit_outcome_model(data, spec)
    save_model(model, args.out)
    _write_manifest(
        args.out,
        "fit",
        {
            "data": args.data,
            "design": args.design,
            "coding": args.coding,
            "vcov": args.vcov,
            "group": args.group,
            "stage": args.stage,
            "interactions": not args.no_interactions,
        },
        None,
        [args.data, args.design],
    )
    return EXIT_OK


def _cmd_optimize(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt optimize", description="Optimize an intervention distribution.")
    p.add_argument("--config")
    p.add_argument("--method", default="closed",
                   choices=["closed", "ascent", "two-step", "one-step"])
    p.add_argument("--model", help="model JSON (closed/ascent)")
    p.add_argument("--data", help="task CSV (two-step/one-step)")
    p.add_argument("--design", help="design JSON (two-step/one-step)")
    p.add_argument("--penalty", default="l2", choices=["l2", "max_prob"])
    p.add_argument("--lambda", dest="lam", type=float, help="penalty weight (closed/ascent)")
    p.add_argument("--lambda-grid", help="comma list of penalty weights (two-step/one-step)")
    p.add_argument("--coding", default="sum_to_zero", choices=["sum_to_zero", "baseline"])
    p.add_argument("--vcov", default="respondent_cluster", choices=["iid", "respondent_cluster"])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--se", action="store_true", help="attach delta-method inference (closed/ascent)")
    p.add_argument("--out", help="output JSON (stdout when omitted)")
    p.add_argument("--csv-out", help="optional plot CSV: per-lambda table and pi components")
    args = _apply_config(p, argv)
    inputs = []
    seed = None
    if args.method in ("closed", "ascent"):
        if not args.model or args.lam is None:
            raise InvalidParameterError(
                f"--model and --lambda are required for method {args.method}"
            )
        model = load_model(args.model)
        inputs.append(args.model)
        penalty = PenaltyConfig(args.penalty, args.lam)
        if args.method == "closed":
            est = solve_profile(model, penalty, route="closed")
        else:
            est = maximize(model, penalty)
        if args.se:
            from dataclasses import replace

            inf = delta_method(model, est, penalty)
            est = replace(est, se_q=inf.se_q, se_pi=inf.se_pi, inference=inf)
        doc = _estimate_doc(est)
        params = {
            "method": args.method, "model": args.model, "penalty": args.penalty,
            "lambda": args.lam, "se": args.se,
        }
        _emit(doc, args.out, "optimize", params, seed, inputs)
        if args.csv_out:
            _write_pi_csv(args.csv_out, est, None)
            _write_manifest(args.csv_out, "optimize", params, seed, inputs)
        return EXIT_OK if est.converged else EXIT_NONCONVERGED
    # data-driven methods
    if not args.data or not args.design or not args.lambda_grid:
        raise InvalidParameterError(
            f"--data, --design, and --lambda-grid are required for method {args.method}"
        )
    design = load_design(args.design)
    data = load_dataset(args.data, design)
    inputs.extend([args.data, args.design])
    grid = _parse_floats(args.lambda_grid, "--lambda-grid")
    if args.method == "two-step":
        cfg = TwoStepConfig(
            fit=FitSpec(coding=args.coding, vcov=args.vcov),
            penalty_kind=args.penalty,
        )
        result = two_step_estimate(data, grid, cfg)
        doc = {
            "method": "two_step",
            "lambda_grid": list(result.lambda_grid),
            "lambda_star": result.lambda_star,
            "table": [
                {
                    "lambda": r.lam, "q": r.q_value, "se": r.se_q,
                    "criterion": r.criterion, "route": r.route,
                }
                for r in result.table
            ],
            "estimate": _estimate_doc(result.estimate),
        }
        params = {
            "method": args.method, "data": args.data, "design": args.design,
            "penalty": args.penalty, "lambda_grid": list(grid),
            "coding": args.coding, "vcov": args.vcov,
        }
        _emit(doc, args.out, "optimize", params, seed, inputs)
        if args.csv_out:
            _write_pi_csv(args.csv_out, result.estimate, result.table)
            _write_manifest(args.csv_out, "optimize", params, seed, inputs)
        return EXIT_OK if result.estimate.converged else EXIT_NONCONVERGED
    seed = args.split_seed
    cfg = OneStepConfig(
        penalty_kind=args.penalty, folds=args.folds, seed=args.split_seed
    )
    result = one_step_estimate(data, grid, cfg)
    doc = {
        "method": "one_step",
        "lambda_grid": list(result.lambda_grid),
        "lambda_star": result.lambda_star,
        "cv_values": result.cv_values,
        "cv_criterion": list(result.cv_criterion),
        "n_selection": result.n_selection,
        "n_estimation": result.n_estimation,
        "estimate": _estimate_doc(result.estimate),
    }
    params = {
        "method": args.method, "data": args.data, "design": args.design,
        "penalty": args.penalty, "lambda_grid": list(grid),
        "folds": args.folds, "split_seed": args.split_seed,
    }
    _emit(doc, args.out, "optimize", params, seed, inputs)
    if args.csv_out:
        _write_pi_csv(args.csv_out, result.estimate, None)
        _write_manifest(args.csv_out, "optimize", params, seed, inputs)
    return EXIT_OK if result.estimate.converged else EXIT_NONCONVERGED


def _write_pi_csv(path: str, est, table) -> None:
    """Plot-ready CSV: optional per-lambda block, then pi components."""
    lines = []
    if table is not None:
        lines.append("lambda,q,se,criterion")
        for r in table:
            lines.append(
                ",".join(format_float(v) for v in (r.lam, r.q_value, r.se_q, r.criterion))
            )
        lines.append("")
    lines.append("factor,level,prob,se")
    design = est.pi_star.design
    at = 0
    for d, f in enumerate(design.factors):
        for l, name in enumerate(f.levels):
            se = est.se_pi[at] if est.se_pi is not None else float("nan")
            lines.append(
                ",".join(
                    [f.name, name, format_float(est.pi_star.factor(d)[l]), format_float(se)]
                )
            )
            at += 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_adversarial(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt adversarial", description="Solve the two-stage adversarial game.")
    p.add_argument("--config")
    p.add_argument("--institution", required=True, help="institution JSON file")
    p.add_argument("--penalty", default="l2", choices=["l2", "max_prob"])
    p.add_argument("--lambda", dest="lam", type=float, required=False, default=0.1)
    p.add_argument("--se", action="store_true", help="attach equilibrium delta-method SEs")
    p.add_argument("--deviation-resolution", type=float, default=None,
                   help="also run a unilateral-deviation grid check")
    p.add_argument("--out", help="output JSON (stdout when omitted)")
    args = _apply_config(p, argv)
    spec, inputs = _load_institution(args.institution)
    penalty = PenaltyConfig(args.penalty, args.lam)
    result = solve_equilibrium(spec, penalty)
    doc = {
        "pi_a": [list(map(float, result.pi_a.factor(d)))
                 for d in range(spec.design.n_factors)],
        "pi_b": [list(map(float, result.pi_b.factor(d)))
                 for d in range(spec.design.n_factors)],
        "value": result.value,
        "payoff": result.payoff,
        "converged": result.converged,
        "iterations": result.iterations,
        "grad_sup_a": result.grad_sup_a,
        "grad_sup_b": result.grad_sup_b,
        "oscillating": result.oscillating,
    }
    if args.se:
        inf = equilibrium_delta(spec, penalty, result)
        doc["se"] = {
            "pi_a": list(map(float, inf.se_pi_a)),
            "pi_b": list(map(float, inf.se_pi_b)),
        }
        doc["jacobian_condition"] = inf.jacobian_cond
    if args.deviation_resolution is not None:
        report = deviation_check(
            spec, result.pi_a, result.pi_b, penalty,
            resolution=args.deviation_resolution,
        )
        doc["deviation"] = {"gain_a": report.gain_a, "gain_b": report.gain_b}
    params = {
        "institution": args.institution, "penalty": args.penalty, "lambda": args.lam,
        "se": args.se, "deviation_resolution": args.deviation_resolution,
    }
    _emit(doc, args.out, "adversarial", params, None, inputs)
    return EXIT_OK if result.converged else EXIT_NONCONVERGED


def _load_institution(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"institution file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"institution file is not valid JSON: {exc}") from None
    needed = ("primary_a", "primary_b", "general_a", "general_b")
    missing = [k for k in needed if k not in doc]
    if missing:
        raise ParseError(f"institution file lacks model entries: {missing}")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(rel):
        return rel if os.path.isabs(rel) else os.path.join(base, rel)

    inputs = [path]
    models = {}
    for k in needed:
        mp = resolve(doc[k])
        inputs.append(mp)
        models[k] = load_model(mp)
    design = models["primary_a"].design
    kwargs = {}
    for side in ("a", "b"):
        key = f"challenger_{side}"
        if key in doc and doc[key] is not None:
            kwargs[key] = ProfileDistribution(
                design, tuple(np.asarray(v, float) for v in doc[key])
            )
    spec = InstitutionSpec(
        design=design,
        weight_a=float(doc.get("weight_a", 0.5)),
        weight_b=float(doc.get("weight_b", 0.5)),
        **models,
        **kwargs,
    )
    return spec, inputs


def _cmd_simulate(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt simulate", description="Run a Monte Carlo study.")
    p.add_argument("--config")
    p.add_argument("--study", required=True, choices=["average", "adversarial"])
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None,
                   help="study seed (average defaults to 1, adversarial to 0)")
    p.add_argument("--out", required=True, help="output metrics CSV")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--d", type=int, default=5, help="number of factors (average study)")
    p.add_argument("--n", default=None, help="comma list of sample sizes")
    p.add_argument("--p-r", dest="p_r", default="0.2,0.3,0.5,0.65,0.8",
                   help="comma list of group shares (adversarial study)")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    args = _apply_config(p, argv)
    threads = args.threads if args.threads is not None else _threads_default()
    if args.study == "average":
        reps = args.reps if args.reps is not None else 300
        seed = args.seed if args.seed is not None else 1
        n_values = _parse_ints(args.n, "--n") if args.n else (500, 2000)
        rows, _ = average_case_study(
            n_factors=args.d,
            n_values=n_values,
            replications=reps,
            seed=seed,
            threads=threads,
            lam=args.lam,
        )
        params = {
            "study": "average", "reps": reps, "seed": seed, "d": args.d,
            "n": list(n_values), "lambda": args.lam, "threads": threads,
        }
    else:
        reps = args.reps if args.reps is not None else 200
        seed = args.seed if args.seed is not None else 0
        n_values = _parse_ints(args.n, "--n") if args.n else (1000, 5000, 10000)
        p_values = _parse_floats(args.p_r, "--p-r")
        rows, _ = adversarial_study(
            p_values=p_values,
            n_values=n_values,
            replications=reps,
            seed=seed,
            lam=args.lam if args.lam is not None else 0.2,
            threads=threads,
        )
        params = {
            "study": "adversarial", "reps": reps, "seed": seed,
            "n": list(n_values), "p_r": list(p_values),
            "lambda": args.lam if args.lam is not None else 0.2,
            "threads": threads,
        }
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv_text(rows))
    _write_manifest(args.out, "simulate", params, seed, [])
    return EXIT_OK


def _cmd_diverge(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt diverge", description="Strategic divergence of one profile under two strategies.")
    p.add_argument("--config")
    p.add_argument("--strategy-a", required=True)
    p.add_argument("--strategy-b", required=True)
    p.add_argument("--profile", required=True,
                   help="comma list of level names, one per factor")
    p.add_argument("--out", help="output JSON (stdout when omitted)")
    args = _apply_config(p, argv)
    pi_a = _load_strategy(args.strategy_a)
    pi_b = _load_strategy(args.strategy_b)
    names = [v.strip() for v in args.profile.split(",")]
    design = pi_a.design
    if len(names) != design.n_factors:
        raise InvalidParameterError(
            f"--profile needs {design.n_factors} level names, got {len(names)}"
        )
    levels = []
    for d, (f, nm) in enumerate(zip(design.factors, names)):
        if nm not in f.levels:
            raise InvalidParameterError(
                f"factor {f.name!r} has no level {nm!r} (levels: {list(f.levels)})"
            )
        levels.append(f.levels.index(nm))
    from .design import Profile

    profile = Profile(tuple(levels))
    value = strategic_divergence(pi_a, pi_b, profile)
    doc = {"divergence": value, "profile": names}
    params = {
        "strategy_a": args.strategy_a, "strategy_b": args.strategy_b,
        "profile": args.profile,
    }
    _emit(doc, args.out, "diverge", params, None,
          [args.strategy_a, args.strategy_b])
    return EXIT_OK


def _cmd_bound(argv) -> int:
    p = argparse.ArgumentParser(prog="conjointopt bound", description="Variance bound of the weighting estimator at an intervention.")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="task CSV file")
    p.add_argument("--design", required=True, help="design JSON file")
    p.add_argument("--strategy", required=True, help="strategy JSON file")
    p.add_argument("--out", help="also write the JSON here")
    args = _apply_config(p, argv)
    design = load_design(args.design)
    data = load_dataset(args.data, design)
    pi = _load_strategy(args.strategy)
    result = estimate_variance_bound(data, pi)
    comp = compare_penalties(design, pi)
    doc = {
        "bound": result.bound,
        "max_prob": result.max_prob,
        "support_size": result.support_size,
        "shift_applied": result.shift_applied,
        "l2_term": comp.l2_term,
        "maxprob_term": comp.maxprob_term,
    }
    text = dumps(doc) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        _write_manifest(
            args.out, "bound",
            {"data": args.data, "design": args.design, "strategy": args.strategy},
            None, [args.data, args.design, args.strategy],
        )
    return EXIT_OK


_COMMANDS = {
    "fit": _cmd_fit,
    "optimize": _cmd_optimize,
    "adversarial": _cmd_adversarial,
    "simulate": _cmd_simulate,
    "diverge": _cmd_diverge,
    "bound": _cmd_bound,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stderr.write(
            "usage: conjointopt {fit,optimize,adversarial,simulate,diverge,bound} ...\n"
        )
        return EXIT_OK if argv else EXIT_VALIDATION
    cmd = argv[0]
    if cmd not in _COMMANDS:
        sys.stderr.write(f"unknown command: {cmd}\n")
        return EXIT_VALIDATION
    try:
        return _COMMANDS[cmd](argv[1:])
    except ValidationError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except NumericalError as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return EXIT_NUMERICAL
    except ConjointOptError as exc:  # any remaining package error
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION
    except OSError as exc:  # unreadable inputs, unwritable outputs
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
