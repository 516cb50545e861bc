"""Acceptance suite: ten end-to-end criteria with stated tolerances.

Each test prints a single ``[acceptance N] name: PASS`` line on success; a
failing assertion marks the criterion FAIL. The expensive criteria (7 and 9)
run the full default benchmark grids and the 20-seed learning experiment.
"""

import filecmp
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from matchope import (
    OplConfig,
    Policy,
    RewardModel,
    SoftmaxPolicyParams,
    SweepConfig,
    SyntheticEnvSpec,
    bias_dips_estimated_pi0,
    bias_dpr_estimated_pi0,
    bias_ips_estimated_pi0,
    enumerate_profile,
    epsilon_greedy_target_policy,
    estimate,
    EstimatorInput,
    generate_environment,
    grad_baseline_pg,
    grad_dips_pg,
    grad_dpr_pg,
    mc_estimates,
    policy_probs,
    run_opl_experiment,
    run_sweep,
    sample_logged_data,
    softmax_logging_policy,
    true_policy_value,
)
from matchope.models import feature_length
from matchope.verify import (
    check_collapse_lattice,
    check_enumeration,
    check_variance_reduction,
    random_instance,
)


_CAPTURE = None


@pytest.fixture(autouse=True)
def _route_past_capture(capfd):
    global _CAPTURE
    _CAPTURE = capfd
    yield
    _CAPTURE = None


def _pass(number: int, name: str, started: float, budget: float) -> None:
    elapsed = time.perf_counter() - started
    assert elapsed < budget, f"criterion {number} took {elapsed:.1f}s (budget {budget}s)"
    # emit one visible line per criterion even under pytest's capture
    line = f"[acceptance {number:02d}] {name}: PASS ({elapsed:.1f}s)"
    if _CAPTURE is not None:
        with _CAPTURE.disabled():
            print(line)
    else:
        print(line)


def _mid_instance(n_c: int, n_j: int, seed: int = 0):
    spec = SyntheticEnvSpec(
        n_companies=n_c, n_seekers=n_j, dim=10, theta_sp=2.0, seed=seed
    )
    env, _ = generate_environment(spec)
    pi0 = softmax_logging_policy(env, beta=-0.5)
    pi = epsilon_greedy_target_policy(env, epsilon=0.2)
    return env, pi, pi0


def test_criterion_01_collapse_lattice():
    t0 = time.perf_counter()
    ok, detail = check_collapse_lattice(n_instances=50)
    assert ok, detail
    _pass(1, "collapse lattice (7 exact collapses, 50 instances)", t0, 10.0)


def test_criterion_02_unbiasedness():
    t0 = time.perf_counter()
    env, pi, pi0 = _mid_instance(50, 10)
    oracle = RewardModel(q_hat_r=env.q_r, q_hat_m=env.q_m, q_hat_s=env.q_s)
    truth = true_policy_value(env, pi)
    n_reps = 100_000
    ests = mc_estimates(
        env, pi, pi0, ("ips", "dr", "dips", "dpr"), n_reps, seed=202, model=oracle
    )
    for name, values in ests.items():
        se = values.std(ddof=1) / np.sqrt(n_reps)
        gap = abs(values.mean() - truth)
        assert gap <= 3 * se, f"{name}: |mean - V| = {gap:.3e} > 3se = {3 * se:.3e}"
    _pass(2, "unbiasedness of IPS/DR/DiPS/DPR with oracle q_r", t0, 300.0)


def test_criterion_03_analytic_vs_enumeration():
    t0 = time.perf_counter()
    ok, detail = check_enumeration(n_instances=100)
    assert ok, detail
    _pass(3, "analytic bias/variance vs exhaustive enumeration (1e-10)", t0, 30.0)


def test_criterion_04_variance_reduction_chain():
    t0 = time.perf_counter()
    ok, detail = check_variance_reduction(n_instances=100)
    assert ok, detail
    _pass(4, "Var(IPS) - Var(DiPS) >= bound >= 0 on 100 environments", t0, 30.0)


def test_criterion_05_shared_bias():
    t0 = time.perf_counter()
    env, pi, pi0, model, _ = random_instance(505, n_companies=50, n_seekers=10)
    # analytic equality to 1e-12, via the independent enumeration oracle
    bias_dips_exact = enumerate_profile("dips", env, pi, pi0, model).bias
    bias_dpr_exact = enumerate_profile("dpr", env, pi, pi0, model).bias
    assert abs(bias_dips_exact - bias_dpr_exact) <= 1e-12
    # paired Monte Carlo: both estimators on the same replicated datasets
    n_reps = 100_000
    ests = mc_estimates(env, pi, pi0, ("dips", "dpr"), n_reps, seed=505, model=model)
    diff = ests["dpr"] - ests["dips"]
    se = diff.std(ddof=1) / np.sqrt(n_reps)
    assert abs(diff.mean()) <= 3 * se + 1e-12
    _pass(5, "DPR and DiPS share their bias (paired MC + analytic)", t0, 300.0)


def test_criterion_06_estimated_propensity_bias():
    t0 = time.perf_counter()
    env, pi, pi0, model, _ = random_instance(606, n_companies=10, n_seekers=5)
    u = np.full_like(pi0.probs, 1.0 / pi0.probs.shape[1])
    pi0_hat = Policy(probs=0.7 * pi0.probs + 0.3 * u)
    full = RewardModel(q_hat_r=model.q_hat_r, q_hat_m=model.q_hat_m, pi0_hat=pi0_hat)
    predictions = {
        "ips": bias_ips_estimated_pi0(env, pi, pi0, pi0_hat),
        "dips": bias_dips_estimated_pi0(env, pi, pi0, full),
        "dpr": bias_dpr_estimated_pi0(env, pi, pi0, full),
    }
    n_reps = 1_000_000
    truth = true_policy_value(env, pi)
    ests = mc_estimates(
        env, pi, pi0, tuple(predictions), n_reps, seed=606, model=full,
        pi0_hat=pi0_hat,
    )
    for name, predicted in predictions.items():
        values = ests[name]
        se = values.std(ddof=1) / np.sqrt(n_reps)
        gap = abs((values.mean() - truth) - predicted)
        assert gap <= 3 * se, f"{name}: |MC bias - oracle| = {gap:.3e} > {3 * se:.3e}"
    _pass(6, "estimated-propensity bias oracles (3 SE at 1e6 reps)", t0, 600.0)


def test_criterion_07_trend_reproduction():
    t0 = time.perf_counter()
    failures = []
    highest_sparsity_checked = False
    for axis in ("n_companies", "n_seekers", "sparsity"):
        report = run_sweep(SweepConfig(axis=axis))
        by_point = {}
        for row in report.rows:
            by_point.setdefault(row.axis_value, {})[row.estimator] = row.mse
        for value, mses in sorted(by_point.items()):
            if not mses["dips"] < mses["ips"]:
                failures.append(f"{axis}={value}: MSE(DiPS) >= MSE(IPS)")
            if not mses["dpr"] < mses["dr"]:
                failures.append(f"{axis}={value}: MSE(DPR) >= MSE(DR)")
        if axis == "sparsity":
            top = max(by_point)
            mses = by_point[top]
            highest_sparsity_checked = True
            if not (mses["dips"] < mses["dm"] and mses["dpr"] < mses["dm"]):
                failures.append(f"sparsity={top}: DiPS/DPR not below DM")
    assert highest_sparsity_checked
    assert not failures, "; ".join(failures)
    _pass(7, "MSE orderings on the default grids with fitted models", t0, 1200.0)


def test_criterion_08_gradient_checks():
    t0 = time.perf_counter()
    env, pi, pi0, model, dataset = random_instance(808, n_companies=12, n_seekers=5)
    p = feature_length(env.contexts.dim, "poly")
    rng = np.random.default_rng(808)
    kinds = ("dm_pg", "ips_pg", "dr_pg", "dips_pg", "dpr_pg")

    def companion(kind, theta):
        target = policy_probs(SoftmaxPolicyParams(theta=theta), env.contexts)
        inp = EstimatorInput(dataset=dataset, target=target, model=model, logging=pi0)
        return estimate(inp, kind.removesuffix("_pg"))

    worst = 0.0
    for trial in range(10):
        theta = 0.5 * rng.normal(size=p)
        params = SoftmaxPolicyParams(theta=theta)
        for kind in kinds:
            if kind == "dips_pg":
                grad = grad_dips_pg(dataset, params, model, env.contexts)
            elif kind == "dpr_pg":
                grad = grad_dpr_pg(dataset, params, model, env.contexts)
            else:
                grad = grad_baseline_pg(
                    dataset, params, model, env.contexts, kind.removesuffix("_pg")
                )
            eps = 1e-5
            fd = np.empty(p)
            for i in range(p):
                up = theta.copy()
                up[i] += eps
                dn = theta.copy()
                dn[i] -= eps
                fd[i] = (companion(kind, up) - companion(kind, dn)) / (2 * eps)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12)
            worst = max(worst, rel)
            assert rel <= 1e-4, f"theta {trial}, {kind}: rel err {rel:.3e}"
    _pass(8, f"PG gradients vs central differences (worst rel {worst:.1e})", t0, 60.0)


def test_criterion_09_opl_trend():
    t0 = time.perf_counter()
    report = run_opl_experiment(OplConfig())
    ips_mean = report.mean_relative("ips_pg")
    ips_se = report.se_relative("ips_pg")
    for learner in ("dips_pg", "dpr_pg"):
        mean = report.mean_relative(learner)
        assert mean > 1.0, f"{learner}: relative value {mean:.4f} <= 1"
        assert mean >= ips_mean - 2 * ips_se, (
            f"{learner}: {mean:.4f} < IPS-PG {ips_mean:.4f} - 2se {2 * ips_se:.4f}"
        )
    _pass(9, "DiPS-PG/DPR-PG beat the logging policy and track IPS-PG", t0, 900.0)


CLI_CONFIG = {
    "base": {"n_companies": 60, "n_seekers": 12, "dim": 4, "seed": 0},
    "fit": {"n_folds": 3},
    "sweep": {
        "axis": "sparsity",
        "axis_values": [1.0, 2.0],
        "n_replications": 6,
        "estimators": ["dm", "ips", "dips", "dpr", "dr"],
    },
    "learn": {"n_iterations": 10},
    "opl": {"n_seeds": 2, "learners": ["ips_pg", "dips_pg"]},
}


def _run_cli(args, out_dir: Path) -> None:
    res = subprocess.run(
        [sys.executable, "-m", "matchope.cli"] + args + ["--out", str(out_dir)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(CLI_CONFIG))
    runs = {
        "sweep_a": (["sweep", "--config", str(cfg_path), "--jobs", "1"]),
        "sweep_b": (["sweep", "--config", str(cfg_path), "--jobs", "1"]),
        "sweep_c": (["sweep", "--config", str(cfg_path), "--jobs", "1"]),
        "sweep_j8": (["sweep", "--config", str(cfg_path), "--jobs", "8"]),
        "learn_a": (["learn", "--config", str(cfg_path), "--jobs", "1"]),
        "learn_b": (["learn", "--config", str(cfg_path), "--jobs", "1"]),
        "learn_c": (["learn", "--config", str(cfg_path), "--jobs", "1"]),
        "learn_j8": (["learn", "--config", str(cfg_path), "--jobs", "8"]),
    }
    for fmt in ("csv", "json"):
        for name, args in runs.items():
            out = tmp_path / fmt / name
            out.mkdir(parents=True)
            _run_cli(args + ["--format", fmt], out)
        for group, ref in (("sweep", "sweep_a"), ("learn", "learn_a")):
            ref_dir = tmp_path / fmt / ref
            ref_files = sorted(p.name for p in ref_dir.iterdir())
            assert ref_files, f"no outputs from {ref}"
            for other in (f"{group}_b", f"{group}_c", f"{group}_j8"):
                other_dir = tmp_path / fmt / other
                assert sorted(p.name for p in other_dir.iterdir()) == ref_files
                for fname in ref_files:
                    same = filecmp.cmp(
                        ref_dir / fname, other_dir / fname, shallow=False
                    )
                    assert same, f"{fmt}/{other}/{fname} differs from {ref}"
    _pass(10, "byte-identical sweep/learn outputs (3 runs, jobs 1 vs 8)", t0, 600.0)
