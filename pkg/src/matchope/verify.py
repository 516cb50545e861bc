"""Self-verification suite: analytic oracles vs independent checks.

Used by the `check` CLI subcommand. Each check returns (name, ok, detail);
the suite passes only if every check passes.
"""

from __future__ import annotations

import numpy as np

from .analytic import (
    enumerate_profile,
    mc_estimates,
    variance_dips,
    variance_dpr,
    variance_dr,
    variance_ips,
    variance_reduction_bound,
    bias_dips,
)
from .core import Environment, Policy, RewardModel, true_policy_value
from .estimators import (
    EstimatorInput,
    cluster_seekers,
    estimate_dips,
    estimate_dm,
    estimate_dpr,
    estimate_dr,
    estimate_extended_mips,
    estimate_extended_switch_dr,
    estimate_ips,
    estimate_mips,
    estimate_switch_dr,
)
from .synth import (
    SyntheticEnvSpec,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)

ENUM_TOL = 1e-10


def random_instance(seed: int, n_companies=3, n_seekers=4):
    """A small environment with policies, dataset and an imperfect model."""
    spec = SyntheticEnvSpec(
        n_companies=n_companies,
        n_seekers=n_seekers,
        dim=3,
        theta_sp=1.0,
        seed=seed,
    )
    env, _ = generate_environment(spec)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 17)))
    pi0 = softmax_logging_policy(env, beta=float(rng.uniform(-2.0, 2.0)))
    pi = epsilon_greedy_target_policy(env, epsilon=float(rng.uniform(0.05, 0.95)))
    model = RewardModel(
        q_hat_r=np.clip(env.q_r + rng.uniform(-0.2, 0.2, env.q_r.shape), 0.01, 0.99),
        q_hat_m=np.clip(env.q_m + rng.uniform(-0.2, 0.2, env.q_m.shape), 0.01, 0.99),
    )
    dataset = sample_logged_data(env, pi0, seed=seed + 1000)
    return env, pi, pi0, model, dataset


def check_collapse_lattice(n_instances: int = 50, seed: int = 0):
    """All seven exact estimator collapses on random small instances."""
    for i in range(n_instances):
        env, pi, pi0, model, dataset = random_instance(seed + i)
        zero_m = RewardModel(
            q_hat_r=model.q_hat_r, q_hat_m=np.zeros_like(env.q_s)
        )
        inp = EstimatorInput(dataset=dataset, target=pi, model=model, logging=pi0)
        inp_zero = EstimatorInput(
            dataset=dataset, target=pi, model=zero_m, logging=pi0
        )
        w = pi.probs[np.arange(dataset.n_companies), dataset.chosen_seeker]
        w = w / dataset.logging_prob
        lam_hi = float(w.max()) + 1.0
        singles = cluster_seekers(env.contexts.seeker_contexts, env.n_seekers)
        checks = [
            ("dr->ips", estimate_dr(inp_zero), estimate_ips(inp)),
            ("dpr->dips", estimate_dpr(inp_zero), estimate_dips(inp)),
            ("switch->dr", estimate_switch_dr(inp, lam_hi), estimate_dr(inp)),
            ("switch->dm", estimate_switch_dr(inp, 0.0), estimate_dm(inp)),
            (
                "ext_switch->dpr",
                estimate_extended_switch_dr(inp, lam_hi),
                estimate_dpr(inp),
            ),
            ("mips->ips", estimate_mips(inp, singles), estimate_ips(inp)),
            ("ext_mips->dips", estimate_extended_mips(inp, singles), estimate_dips(inp)),
        ]
        for name, a, b in checks:
            if a != b:
                return False, f"instance {i}: {name} not exact ({a!r} != {b!r})"
    return True, f"{n_instances} instances, 7 collapses each, exact equality"


def check_enumeration(n_instances: int = 100, seed: int = 100):
    """Analytic bias/variance formulas vs exhaustive outcome enumeration."""
    worst = 0.0
    for i in range(n_instances):
        env, pi, pi0, model, _ = random_instance(seed + i)
        reports = {
            "ips": variance_ips(env, pi, pi0),
            "dr": variance_dr(env, pi, pi0, model),
            "dips": variance_dips(env, pi, pi0, model),
            "dpr": variance_dpr(env, pi, pi0, model),
        }
        for name, rep in reports.items():
            ref = enumerate_profile(name, env, pi, pi0, model)
            err = max(abs(rep.bias - ref.bias), abs(rep.variance - ref.variance))
            worst = max(worst, err)
            if err > ENUM_TOL:
                return False, f"instance {i}, {name}: |analytic - enum| = {err:.3e}"
    return True, f"{n_instances} instances, max |analytic - enum| = {worst:.3e}"


def check_variance_reduction(n_instances: int = 100, seed: int = 300):
    """Var(IPS) - Var(DiPS) >= bound >= 0 under non-overestimation.

    The model class here is uniform multiplicative shrinkage (pessimism),
    q_hat_r = gamma * q_r with gamma in (0, 1]; under that class the
    inequality chain is provable, while arbitrary capped noise can defeat
    the policy-variance component of the gap.
    """
    for i in range(n_instances):
        env, pi, pi0, model, _ = random_instance(seed + i)
        rng = np.random.default_rng(np.random.SeedSequence((seed + i, 23)))
        gamma = float(rng.uniform(0.4, 1.0))
        capped = RewardModel(
            q_hat_r=np.minimum(gamma * env.q_r, env.q_r), q_hat_m=model.q_hat_m
        )
        bound = variance_reduction_bound(env, pi, pi0, capped)
        gap = (
            variance_ips(env, pi, pi0).variance
            - variance_dips(env, pi, pi0, capped).variance
        )
        if not (gap >= bound >= 0.0):
            return False, f"instance {i}: gap={gap!r}, bound={bound!r}"
    return True, f"{n_instances} instances, inequality chain holds"


def check_monte_carlo(seed: int = 900, n_reps: int = 20000):
    """Empirical DiPS moments vs the analytic formulas (3-SE bands)."""
    env, pi, pi0, model, _ = random_instance(seed, n_companies=10, n_seekers=5)
    ests = mc_estimates(env, pi, pi0, ("dips", "dpr"), n_reps, seed, model)
    for name in ("dips", "dpr"):
        e = ests[name]
        analytic_bias = bias_dips(env, pi, model)
        analytic_var = (
            variance_dips(env, pi, pi0, model)
            if name == "dips"
            else variance_dpr(env, pi, pi0, model)
        ).variance
        emp_bias = e.mean() - true_policy_value(env, pi)
        se = e.std(ddof=1) / np.sqrt(n_reps)
        if abs(emp_bias - analytic_bias) > 3 * se:
            return False, f"{name}: bias off by {abs(emp_bias - analytic_bias):.3e} (3se={3 * se:.3e})"
        # variance of the sample variance, normal approximation
        var_se = e.var(ddof=1) * np.sqrt(2.0 / (n_reps - 1))
        if abs(e.var() - analytic_var) > 5 * var_se:
            return False, f"{name}: variance off"
    return True, f"dips/dpr moments match formulas at n_reps={n_reps}"


ALL_CHECKS = (
    ("collapse_lattice", check_collapse_lattice),
    ("analytic_vs_enumeration", check_enumeration),
    ("variance_reduction_chain", check_variance_reduction),
    ("monte_carlo_consistency", check_monte_carlo),
)


def run_all(verbose_print=print) -> bool:
    ok_all = True
    for name, fn in ALL_CHECKS:
        ok, detail = fn()
        ok_all = ok_all and ok
        verbose_print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
