"""Command-line interface.

Subcommands: synth (generate + export a dataset), eval (estimate policy
values on one dataset), sweep (replicated benchmark with report + figures),
learn (off-policy learning experiment), check (verification suite).

Exit codes: 0 success, 1 usage/config error, 2 validation error,
3 verification-suite failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .core import RewardModel, ValidationError, true_policy_value
from .estimators import ESTIMATOR_IDS, EstimatorInput, cluster_seekers, estimate
from .harness import (
    DEFAULT_ESTIMATORS,
    OplConfig,
    SweepConfig,
    export_opl_report,
    run_opl_experiment,
    run_sweep,
)
from .io import export_logged_data, export_report, fmt_float, ingest_logged_data
from .models import FitConfig, fit_logging_policy, fit_reward_models
from .opl import GRADIENT_ESTIMATORS, LearnConfig
from .plots import emit_opl_plot, emit_plots
from .synth import (
    SyntheticEnvSpec,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_CHECK_FAILED = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dataclass_from(cls, section: dict, overrides: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    merged = {k: v for k, v in section.items() if k in names}
    unknown = set(section) - names
    if unknown:
        print(f"error: unknown {cls.__name__} fields: {sorted(unknown)}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)
    for k, v in overrides.items():
        if v is not None and k in names:
            merged[k] = v
    try:
        return cls(**merged)
    except (ValidationError, TypeError) as exc:
        print(f"error: bad {cls.__name__}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _spec_overrides(args) -> dict:
    return {
        "n_companies": args.n_companies,
        "n_seekers": args.n_seekers,
        "dim": args.dim,
        "theta_sp": args.theta_sp,
        "beta": args.beta,
        "epsilon": args.epsilon,
        "seed": args.seed,
    }


def _add_spec_flags(p):
    p.add_argument("--n-companies", type=int, dest="n_companies")
    p.add_argument("--n-seekers", type=int, dest="n_seekers")
    p.add_argument("--dim", type=int)
    p.add_argument("--theta-sp", type=float, dest="theta_sp")
    p.add_argument("--beta", type=float)
    p.add_argument("--epsilon", type=float)


def _add_common(p):
    p.add_argument("--config", type=str, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=str, default=".")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1)


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    spec = _dataclass_from(SyntheticEnvSpec, cfg.get("base", {}), _spec_overrides(args))
    env, _ = generate_environment(spec)
    pi0 = softmax_logging_policy(env, spec.beta)
    dataset = sample_logged_data(env, pi0, spec.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "dataset.jsonl"
    export_logged_data(dataset, path, env.contexts)
    print(
        f"wrote {path} ({dataset.n_companies} records, "
        f"match rate {dataset.m.mean():.4f})"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    spec = _dataclass_from(SyntheticEnvSpec, cfg.get("base", {}), _spec_overrides(args))
    fit = _dataclass_from(FitConfig, cfg.get("fit", {}), {})
    env, _ = generate_environment(spec)
    pi0 = softmax_logging_policy(env, spec.beta)
    pi = epsilon_greedy_target_policy(env, spec.epsilon)
    dataset, table = ingest_logged_data(args.data, n_seekers=spec.n_seekers)
    if dataset.n_companies != spec.n_companies:
        raise ValidationError(
            f"dataset has {dataset.n_companies} records but the config "
            f"declares {spec.n_companies} companies"
        )
    propensity_source = args.propensity_source
    if table and table.get("needs_propensity_estimation") and propensity_source == "logged":
        propensity_source = "estimated"
    if args.model_source == "oracle":
        model = RewardModel(q_hat_r=env.q_r, q_hat_m=env.q_m, q_hat_s=env.q_s)
    else:
        model = fit_reward_models(dataset, env.contexts, fit)
    if propensity_source == "estimated":
        model = dataclasses.replace(
            model, pi0_hat=fit_logging_policy(dataset, env.contexts, fit)
        )
    estimators = args.estimators.split(",") if args.estimators else list(DEFAULT_ESTIMATORS)
    emb = None
    if any(e in ("mips", "ext_mips") for e in estimators):
        emb = cluster_seekers(env.contexts.seeker_contexts)
    inp = EstimatorInput(
        dataset=dataset,
        target=pi,
        model=model,
        propensity_source=propensity_source,
        logging=pi0,
    )
    results = {}
    for est in estimators:
        if est not in ESTIMATOR_IDS:
            raise ValidationError(f"unknown estimator {est!r}")
        results[est] = estimate(inp, est, lam=args.switch_lambda, emb=emb)
    truth = true_policy_value(env, pi)
    width = max(len(e) for e in results)
    print(f"{'estimator':<{width}}  estimate")
    for est, value in results.items():
        print(f"{est:<{width}}  {value:.6f}")
    print(f"{'(true)':<{width}}  {truth:.6f}")
    if args.format == "json":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = ",".join(f'"{k}":{fmt_float(v)}' for k, v in results.items())
        (out / "estimates.json").write_text("{" + payload + "}\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    base = _dataclass_from(SyntheticEnvSpec, cfg.get("base", {}), _spec_overrides(args))
    fit = _dataclass_from(FitConfig, cfg.get("fit", {}), {})
    sweep_section = dict(cfg.get("sweep", {}))
    overrides = {
        "axis": args.axis,
        "n_replications": args.n_replications,
        "model_source": args.model_source,
        "propensity_source": args.propensity_source,
        "master_seed": args.seed,
        "switch_lambda": args.switch_lambda,
    }
    if args.axis_values:
        overrides["axis_values"] = tuple(float(v) for v in args.axis_values.split(","))
    if args.estimators:
        overrides["estimators"] = tuple(args.estimators.split(","))
    if "axis_values" in sweep_section:
        sweep_section["axis_values"] = tuple(sweep_section["axis_values"])
    if "estimators" in sweep_section:
        sweep_section["estimators"] = tuple(sweep_section["estimators"])
    sweep_section["base"] = base
    sweep_section["fit"] = fit
    sweep = _dataclass_from(SweepConfig, sweep_section, overrides)
    report = run_sweep(sweep, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"report.{args.format}"
    export_report(report, report_path, args.format)
    figures = emit_plots(report, out)
    print(f"wrote {report_path} and {len(figures)} figures to {out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _load_config(args.config)
    base = _dataclass_from(SyntheticEnvSpec, cfg.get("base", {}), _spec_overrides(args))
    fit = _dataclass_from(FitConfig, cfg.get("fit", {}), {})
    learn_overrides = {
        "learning_rate": args.learning_rate,
        "n_iterations": args.n_iterations,
    }
    learn = _dataclass_from(LearnConfig, cfg.get("learn", {}), learn_overrides)
    opl_section = dict(cfg.get("opl", {}))
    overrides = {"n_seeds": args.n_seeds, "master_seed": args.seed}
    if args.learners:
        overrides["learners"] = tuple(args.learners.split(","))
    if "learners" in opl_section:
        opl_section["learners"] = tuple(opl_section["learners"])
    opl_section["base"] = base
    opl_section["fit"] = fit
    opl_section["learn"] = learn
    opl = _dataclass_from(OplConfig, opl_section, overrides)
    report = run_opl_experiment(opl, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"opl_report.{args.format}"
    export_opl_report(report, report_path, args.format)
    figure = emit_opl_plot(report, out)
    for learner in opl.learners:
        print(
            f"{learner}: relative value "
            f"{report.mean_relative(learner):.4f} "
            f"(se {report.se_relative(learner):.4f})"
        )
    print(f"wrote {report_path} and {figure}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .verify import run_all

    ok = run_all()
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="matchope")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate and export a synthetic dataset")
    _add_common(p)
    _add_spec_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="estimate policy values on one dataset")
    _add_common(p)
    _add_spec_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--estimators", type=str, default=None)
    p.add_argument("--model-source", choices=("oracle", "fitted"), default="fitted")
    p.add_argument(
        "--propensity-source", choices=("logged", "estimated"), default="logged"
    )
    p.add_argument("--switch-lambda", type=float, default=float("inf"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a replicated benchmark sweep")
    _add_common(p)
    _add_spec_flags(p)
    p.add_argument("--axis", choices=("n_companies", "n_seekers", "sparsity"), default=None)
    p.add_argument("--axis-values", type=str, default=None)
    p.add_argument("--n-replications", type=int, dest="n_replications", default=None)
    p.add_argument("--estimators", type=str, default=None)
    p.add_argument("--model-source", choices=("oracle", "fitted"), default=None)
    p.add_argument(
        "--propensity-source", choices=("logged", "estimated"), default=None
    )
    p.add_argument("--switch-lambda", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("learn", help="run the off-policy learning experiment")
    _add_common(p)
    _add_spec_flags(p)
    p.add_argument("--learners", type=str, default=None)
    p.add_argument("--n-seeds", type=int, dest="n_seeds", default=None)
    p.add_argument("--learning-rate", type=float, dest="learning_rate", default=None)
    p.add_argument("--n-iterations", type=int, dest="n_iterations", default=None)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("check", help="run the verification suite")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
