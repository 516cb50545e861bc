"""Experiment sweeps, the MSE/ErrorRate pipeline, and the OPL benchmark.

Replication seeds derive from (master_seed, axis_index, replication_index)
and results are stored by replication index, so reports do not depend on
how replications are scheduled across workers.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import Environment, Policy, RewardModel, ValidationError, true_policy_value
from .estimators import ESTIMATOR_IDS, EstimatorInput, cluster_seekers, estimate
from .models import FitConfig, fit_logging_policy, fit_reward_models
from .opl import GRADIENT_ESTIMATORS, LearnConfig, learn_policy, policy_probs
from .synth import (
    SyntheticEnvSpec,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)

SWEEP_AXES = ("n_companies", "n_seekers", "sparsity")

DEFAULT_AXIS_GRIDS = {
    "n_companies": (250, 500, 1000, 2000, 4000),
    "n_seekers": (25, 50, 100, 200, 400),
    "sparsity": (0.0, 1.0, 2.0, 3.0, 4.0),
}

DEFAULT_ESTIMATORS = ("dm", "ips", "dr", "dips", "dpr")

MAX_FAILURE_FRACTION = 0.01


def derive_seed(*parts: int) -> int:
    """Collapse an index tuple to a 64-bit seed via SeedSequence hashing."""
    ss = np.random.SeedSequence(tuple(int(p) for p in parts))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SweepConfig:
    axis: str = "n_companies"
    axis_values: tuple = ()
    n_replications: int = 200
    estimators: tuple = DEFAULT_ESTIMATORS
    base: SyntheticEnvSpec = field(default_factory=SyntheticEnvSpec)
    fit: FitConfig = field(default_factory=FitConfig)
    model_source: str = "fitted"
    propensity_source: str = "logged"
    master_seed: int = 0
    switch_lambda: float = float("inf")

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValidationError(f"axis must be one of {SWEEP_AXES}")
        if not self.axis_values:
            object.__setattr__(self, "axis_values", DEFAULT_AXIS_GRIDS[self.axis])
        vals = tuple(float(v) for v in self.axis_values)
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValidationError("axis_values must be strictly increasing")
        if self.n_replications < 2:
            raise ValidationError("n_replications must be >= 2")
        for est in self.estimators:
            if est not in ESTIMATOR_IDS:
                raise ValidationError(f"unknown estimator {est!r}")
        if self.model_source not in ("oracle", "fitted"):
            raise ValidationError("model_source must be 'oracle' or 'fitted'")
        if self.propensity_source not in ("logged", "estimated"):
            raise ValidationError("propensity_source must be 'logged' or 'estimated'")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: float
    estimator: str
    mse: float
    squared_bias: float
    variance: float
    error_rate: float
    mean_estimate: float
    true_value: float
    n_reps: int
    se_mse: float


@dataclass(frozen=True)
class ExperimentReport:
    axis: str
    rows: list


def error_rate(
    estimates_pi: np.ndarray,
    estimates_pi0: np.ndarray,
    true_pi: float,
    true_pi0: float,
) -> float:
    """Fraction of replications whose ranking of pi vs pi0 is wrong.

    Uses the >= / < convention: when the truth says pi >= pi0, estimating
    pi below pi0 counts as an error, and vice versa.
    """
    est_up = np.asarray(estimates_pi) >= np.asarray(estimates_pi0)
    truth_up = true_pi >= true_pi0
    errors = est_up != truth_up
    return float(np.mean(errors))


def _spec_for_axis(base: SyntheticEnvSpec, axis: str, value: float, seed: int):
    if axis == "n_companies":
        return dataclasses.replace(base, n_companies=int(value), seed=seed)
    if axis == "n_seekers":
        return dataclasses.replace(base, n_seekers=int(value), seed=seed)
    return dataclasses.replace(base, theta_sp=float(value), seed=seed)


def _replication(cfg: SweepConfig, env, pi, pi0, emb, seed: int):
    dataset = sample_logged_data(env, pi0, seed)
    if cfg.model_source == "oracle":
        pi0_hat = pi0 if cfg.propensity_source == "estimated" else None
        model = RewardModel(
            q_hat_r=env.q_r, q_hat_m=env.q_m, q_hat_s=env.q_s, pi0_hat=pi0_hat
        )
    else:
        model = fit_reward_models(dataset, env.contexts, cfg.fit)
        if cfg.propensity_source == "estimated":
            pi0_hat = fit_logging_policy(dataset, env.contexts, cfg.fit)
            model = dataclasses.replace(model, pi0_hat=pi0_hat)
    inp_pi = EstimatorInput(
        dataset=dataset,
        target=pi,
        model=model,
        propensity_source=cfg.propensity_source,
        logging=pi0,
    )
    inp_pi0 = EstimatorInput(
        dataset=dataset,
        target=pi0,
        model=model,
        propensity_source=cfg.propensity_source,
        logging=pi0,
    )
    result = {}
    for est in cfg.estimators:
        try:
            result[est] = (
                estimate(inp_pi, est, lam=cfg.switch_lambda, emb=emb),
                estimate(inp_pi0, est, lam=cfg.switch_lambda, emb=emb),
            )
        except Exception as exc:  # recorded and excluded, counted by the caller
            result[est] = exc
    return result


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> ExperimentReport:
    """Replicate sample -> fit -> estimate over every axis value."""
    rows = []
    needs_emb = any(e in ("mips", "ext_mips") for e in cfg.estimators)
    for ai, value in enumerate(cfg.axis_values):
        spec = _spec_for_axis(
            cfg.base, cfg.axis, value, derive_seed(cfg.master_seed, ai)
        )
        env, _ = generate_environment(spec)
        pi0 = softmax_logging_policy(env, spec.beta)
        pi = epsilon_greedy_target_policy(env, spec.epsilon)
        true_pi = true_policy_value(env, pi)
        true_pi0 = true_policy_value(env, pi0)
        emb = cluster_seekers(env.contexts.seeker_contexts) if needs_emb else None

        seeds = [derive_seed(cfg.master_seed, ai, k) for k in range(cfg.n_replications)]

        def one(seed: int):
            return _replication(cfg, env, pi, pi0, emb, seed)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(one, seeds))
        else:
            results = [one(s) for s in seeds]

        for est in cfg.estimators:
            pairs = [r[est] for r in results]
            failures = [p for p in pairs if isinstance(p, Exception)]
            if len(failures) > MAX_FAILURE_FRACTION * cfg.n_replications:
                raise RuntimeError(
                    f"estimator {est!r} failed in {len(failures)} of "
                    f"{cfg.n_replications} replications at "
                    f"{cfg.axis}={value}: {failures[0]}"
                )
            ok = [p for p in pairs if not isinstance(p, Exception)]
            est_pi = np.array([p[0] for p in ok])
            est_pi0 = np.array([p[1] for p in ok])
            mean = float(est_pi.mean())
            variance = float(est_pi.var())
            squared_bias = (mean - true_pi) ** 2
            sq_err = (est_pi - true_pi) ** 2
            rows.append(
                SweepRow(
                    axis=cfg.axis,
                    axis_value=float(value),
                    estimator=est,
                    mse=squared_bias + variance,
                    squared_bias=squared_bias,
                    variance=variance,
                    error_rate=error_rate(est_pi, est_pi0, true_pi, true_pi0),
                    mean_estimate=mean,
                    true_value=true_pi,
                    n_reps=len(ok),
                    se_mse=float(sq_err.std(ddof=1) / np.sqrt(len(ok))),
                )
            )
    return ExperimentReport(axis=cfg.axis, rows=rows)


# ---------------------------------------------------------------------------
# Off-policy learning experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OplConfig:
    base: SyntheticEnvSpec = field(default_factory=SyntheticEnvSpec)
    fit: FitConfig = field(default_factory=FitConfig)
    learn: LearnConfig = field(default_factory=LearnConfig)
    learners: tuple = GRADIENT_ESTIMATORS
    n_seeds: int = 20
    master_seed: int = 0

    def __post_init__(self):
        for learner in self.learners:
            if learner not in GRADIENT_ESTIMATORS:
                raise ValidationError(f"unknown gradient estimator {learner!r}")
        if self.n_seeds < 1:
            raise ValidationError("n_seeds must be >= 1")


@dataclass(frozen=True)
class OplRow:
    learner: str
    seed_index: int
    relative_value: float
    learned_value: float
    logging_value: float


@dataclass(frozen=True)
class OplReport:
    rows: list

    def mean_relative(self, learner: str) -> float:
        vals = [r.relative_value for r in self.rows if r.learner == learner]
        return float(np.mean(vals))

    def se_relative(self, learner: str) -> float:
        vals = np.array([r.relative_value for r in self.rows if r.learner == learner])
        if len(vals) < 2:
            return 0.0
        return float(vals.std(ddof=1) / np.sqrt(len(vals)))


def run_opl_experiment(cfg: OplConfig, jobs: int = 1) -> OplReport:
    """Learn with each gradient estimator and score against the truth."""
    env, _ = generate_environment(cfg.base)
    pi0 = softmax_logging_policy(env, cfg.base.beta)
    logging_value = true_policy_value(env, pi0)

    def one(seed_index: int):
        dataset = sample_logged_data(env, pi0, derive_seed(cfg.master_seed, seed_index))
        model = fit_reward_models(dataset, env.contexts, cfg.fit)
        out = []
        for learner in cfg.learners:
            learn_cfg = dataclasses.replace(
                cfg.learn, gradient_estimator=learner, seed=seed_index
            )
            params, _ = learn_policy(dataset, env.contexts, model, learn_cfg)
            learned_value = true_policy_value(env, policy_probs(params, env.contexts))
            out.append(
                OplRow(
                    learner=learner,
                    seed_index=seed_index,
                    relative_value=learned_value / logging_value,
                    learned_value=learned_value,
                    logging_value=logging_value,
                )
            )
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            nested = list(pool.map(one, range(cfg.n_seeds)))
    else:
        nested = [one(i) for i in range(cfg.n_seeds)]
    rows = [row for chunk in nested for row in chunk]
    # stable ordering: by learner as configured, then seed
    order = {learner: i for i, learner in enumerate(cfg.learners)}
    rows.sort(key=lambda r: (order[r.learner], r.seed_index))
    return OplReport(rows=rows)


def export_opl_report(report: OplReport, path, fmt: str = "csv") -> None:
    from .io import fmt_float

    columns = ("learner", "seed", "relative_value", "learned_value", "logging_value")
    if fmt == "csv":
        lines = [",".join(columns)]
        for row in report.rows:
            lines.append(
                ",".join(
                    [
                        row.learner,
                        str(row.seed_index),
                        fmt_float(row.relative_value),
                        fmt_float(row.learned_value),
                        fmt_float(row.logging_value),
                    ]
                )
            )
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "json":
        chunks = []
        for row in report.rows:
            chunks.append(
                "{"
                + f'"learner":"{row.learner}","seed":{row.seed_index},'
                + f'"relative_value":{fmt_float(row.relative_value)},'
                + f'"learned_value":{fmt_float(row.learned_value)},'
                + f'"logging_value":{fmt_float(row.logging_value)}'
                + "}"
            )
        path.write_text('{"rows":[' + ",".join(chunks) + "]}\n")
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
