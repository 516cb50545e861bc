"""Closed-form bias/variance oracles and their verification counterparts.

Each formula takes the ground-truth environment, so it can serve as an exact
reference for the sampling behavior of the estimators. Two independent
checks live alongside: an exhaustive outcome-enumeration oracle (records
factorize per company, so enumeration costs |J|*4 terms per company) and a
vectorized Monte-Carlo profiler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigurationError,
    Environment,
    Policy,
    RewardModel,
    ValidationError,
    true_policy_value,
)

MSE_IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class AnalyticReport:
    estimator: str
    bias: float
    variance: float
    components: dict = field(default_factory=dict)

    @property
    def mse(self) -> float:
        return self.bias**2 + self.variance


def _check_common_support(pi: Policy, pi0: Policy) -> None:
    if ((pi.probs > 0) & (pi0.probs == 0)).any():
        raise ValidationError("common support violated: pi > 0 where pi0 = 0")


def _weight_matrix(pi: Policy, pi0: Policy) -> np.ndarray:
    _check_common_support(pi, pi0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(pi0.probs > 0, pi.probs / pi0.probs, 0.0)
    return w


def _policy_var(pi0: Policy, values: np.ndarray) -> np.ndarray:
    """Variance of values(c, j) under j ~ pi0, exact sums over j per row.

    The sampling distribution of the logged action is the logging policy,
    so both variance components are moments under pi0 (the law-of-total-
    variance derivation; enumeration confirms the measure).
    """
    mean = np.einsum("cj,cj->c", pi0.probs, values)
    return np.einsum("cj,cj->c", pi0.probs, values**2) - mean**2


def variance_ips(env: Environment, pi: Policy, pi0: Policy) -> AnalyticReport:
    """Exact sampling variance of IPS with logged propensities (zero bias)."""
    w = _weight_matrix(pi, pi0)
    noise = np.einsum("cj,cj->c", pi0.probs, w**2 * env.sigma2_m)
    policy = _policy_var(pi0, w * env.q_m)
    n = env.n_companies
    return AnalyticReport(
        estimator="ips",
        bias=0.0,
        variance=float((noise.sum() + policy.sum()) / n**2),
        components={
            "weight_noise": float(noise.sum() / n**2),
            "policy_variance": float(policy.sum() / n**2),
        },
    )


def variance_dr(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> AnalyticReport:
    """Exact variance of DR; the second term depends on q_m - q_hat_m."""
    model.require("q_hat_m")
    w = _weight_matrix(pi, pi0)
    noise = np.einsum("cj,cj->c", pi0.probs, w**2 * env.sigma2_m)
    policy = _policy_var(pi0, w * (env.q_m - model.q_hat_m))
    n = env.n_companies
    return AnalyticReport(
        estimator="dr",
        bias=0.0,
        variance=float((noise.sum() + policy.sum()) / n**2),
        components={
            "weight_noise": float(noise.sum() / n**2),
            "policy_variance": float(policy.sum() / n**2),
        },
    )


def bias_dips(env: Environment, pi: Policy, model: RewardModel) -> float:
    """Average of E_pi[q_s * (q_hat_r - q_r)]."""
    model.require("q_hat_r")
    delta = model.q_hat_r - env.q_r
    return float(np.sum(pi.probs * env.q_s * delta) / env.n_companies)


def variance_dips(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> AnalyticReport:
    model.require("q_hat_r")
    w = _weight_matrix(pi, pi0)
    noise = np.einsum("cj,cj->c", pi0.probs, w**2 * env.sigma2_s * model.q_hat_r**2)
    policy = _policy_var(pi0, w * env.q_s * model.q_hat_r)
    n = env.n_companies
    return AnalyticReport(
        estimator="dips",
        bias=bias_dips(env, pi, model),
        variance=float((noise.sum() + policy.sum()) / n**2),
        components={
            "weight_noise": float(noise.sum() / n**2),
            "policy_variance": float(policy.sum() / n**2),
        },
    )


def variance_dpr(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> AnalyticReport:
    """Exact variance of DPR; the second term depends on q_s*q_hat_r - q_hat_m."""
    model.require("q_hat_r", "q_hat_m")
    w = _weight_matrix(pi, pi0)
    noise = np.einsum("cj,cj->c", pi0.probs, w**2 * env.sigma2_s * model.q_hat_r**2)
    policy = _policy_var(pi0, w * (env.q_s * model.q_hat_r - model.q_hat_m))
    n = env.n_companies
    return AnalyticReport(
        estimator="dpr",
        bias=bias_dips(env, pi, model),
        variance=float((noise.sum() + policy.sum()) / n**2),
        components={
            "weight_noise": float(noise.sum() / n**2),
            "policy_variance": float(policy.sum() / n**2),
        },
    )


def variance_reduction_bound(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> float:
    """Guaranteed IPS-to-DiPS variance reduction under non-overestimation.

    Requires q_hat_r <= q_r everywhere; the returned bound is nonnegative
    and never exceeds variance_ips - variance_dips (both checked).
    """
    model.require("q_hat_r")
    over = model.q_hat_r > env.q_r
    if over.any():
        c, j = np.unravel_index(int(np.argmax(over)), over.shape)
        raise ValidationError(
            f"q_hat_r overestimates q_r at pair (company={c}, seeker={j}): "
            f"{model.q_hat_r[c, j]!r} > {env.q_r[c, j]!r}"
        )
    w = _weight_matrix(pi, pi0)
    bound = float(
        np.sum(pi0.probs * w**2 * env.q_s * env.sigma2_r) / env.n_companies**2
    )
    gap = variance_ips(env, pi, pi0).variance - variance_dips(env, pi, pi0, model).variance
    if bound < 0 or gap < bound - 1e-12 * max(1.0, abs(gap)):
        raise AssertionError(
            f"variance-reduction bound violated: gap={gap!r} < bound={bound!r}"
        )
    return bound


def _pi0_hat_probs(model: RewardModel) -> np.ndarray:
    if model.pi0_hat is None:
        raise ConfigurationError("an estimated logging policy (pi0_hat) is required")
    return model.pi0_hat.probs


def bias_ips_estimated_pi0(
    env: Environment, pi: Policy, pi0: Policy, pi0_hat: Policy
) -> float:
    """Bias of IPS when weights divide by an estimated logging policy."""
    ratio = pi0.probs / pi0_hat.probs
    return float(np.sum(pi.probs * (ratio - 1.0) * env.q_m) / env.n_companies)


def bias_dips_estimated_pi0(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> float:
    """Bias of DiPS under pi0_hat, in the pre-ratio form.

    E_pi[(pi0/pi0_hat) * q_s * q_hat_r - q_m]; algebraically equal to the
    ratio form wherever q_r > 0 and free of 0/0 where it vanishes.
    """
    model.require("q_hat_r")
    ratio = pi0.probs / _pi0_hat_probs(model)
    inner = ratio * env.q_s * model.q_hat_r - env.q_m
    return float(np.sum(pi.probs * inner) / env.n_companies)


def bias_dpr_estimated_pi0(
    env: Environment, pi: Policy, pi0: Policy, model: RewardModel
) -> float:
    """Bias of DPR under pi0_hat, in the pre-ratio form."""
    model.require("q_hat_r", "q_hat_m")
    ratio = pi0.probs / _pi0_hat_probs(model)
    inner = (ratio - 1.0) * (env.q_s * model.q_hat_r - model.q_hat_m) + env.q_s * (
        model.q_hat_r - env.q_r
    )
    return float(np.sum(pi.probs * inner) / env.n_companies)


# ---------------------------------------------------------------------------
# Exhaustive outcome enumeration (exact moments for small instances)
# ---------------------------------------------------------------------------


def _record_term_tables(
    estimator: str,
    env: Environment,
    pi: Policy,
    pi0: Policy,
    model: RewardModel,
    *,
    lam: float = np.inf,
    pi0_hat: Policy | None = None,
):
    """Per-outcome term t(c, j, s, r) of the estimator's company average.

    Returns a callable; the estimator value on a dataset is the mean over
    companies of these terms, so the moments of the estimator follow from
    the per-company outcome distribution.
    """
    denom = (pi0_hat or pi0).probs
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(denom > 0, pi.probs / denom, 0.0)
    dm_rows = None
    if model.q_hat_m is not None:
        dm_rows = np.einsum("cj,cj->c", pi.probs, model.q_hat_m)

    def term(c: int, j: int, s: int, r: int) -> float:
        m = s * r
        if estimator == "dm":
            return float(dm_rows[c])
        if estimator == "ips":
            return float(w[c, j] * m)
        if estimator == "dr":
            return float(w[c, j] * (m - model.q_hat_m[c, j]) + dm_rows[c])
        if estimator == "dips":
            return float(w[c, j] * s * model.q_hat_r[c, j])
        if estimator == "dpr":
            return float(
                w[c, j] * (s * model.q_hat_r[c, j] - model.q_hat_m[c, j]) + dm_rows[c]
            )
        if estimator == "switch_dr":
            corr = w[c, j] * (m - model.q_hat_m[c, j]) if w[c, j] <= lam else 0.0
            return float(corr + dm_rows[c])
        if estimator == "ext_switch_dr":
            corr = (
                w[c, j] * (s * model.q_hat_r[c, j] - model.q_hat_m[c, j])
                if w[c, j] <= lam
                else 0.0
            )
            return float(corr + dm_rows[c])
        raise ConfigurationError(f"enumeration does not support {estimator!r}")

    return term


def enumerate_profile(
    estimator: str,
    env: Environment,
    pi: Policy,
    pi0: Policy,
    model: RewardModel,
    *,
    lam: float = np.inf,
    pi0_hat: Policy | None = None,
) -> AnalyticReport:
    """Exact mean/bias/variance via enumeration of all (j, s, r) outcomes.

    Sampling is always under the true pi0; pi0_hat only changes the weights
    inside the estimator.
    """
    term = _record_term_tables(
        estimator, env, pi, pi0, model, lam=lam, pi0_hat=pi0_hat
    )
    n_c, n_j = env.q_s.shape
    mean_total = 0.0
    var_total = 0.0
    for c in range(n_c):
        e1 = 0.0
        e2 = 0.0
        for j in range(n_j):
            pj = pi0.probs[c, j]
            if pj == 0.0:
                continue
            qs = env.q_s[c, j]
            qr = env.q_r[c, j]
            # outcomes: s=0 (r forced to 0), s=1 & r in {0,1}
            outcomes = (
                (0, 0, 1.0 - qs),
                (1, 0, qs * (1.0 - qr)),
                (1, 1, qs * qr),
            )
            for s, r, p_sr in outcomes:
                if p_sr == 0.0:
                    continue
                t = term(c, j, s, r)
                e1 += pj * p_sr * t
                e2 += pj * p_sr * t * t
        mean_total += e1
        var_total += e2 - e1 * e1
    mean = mean_total / n_c
    return AnalyticReport(
        estimator=estimator,
        bias=mean - true_policy_value(env, pi),
        variance=var_total / n_c**2,
        components={"mean": mean},
    )


# ---------------------------------------------------------------------------
# Monte-Carlo profiling (vectorized over replications)
# ---------------------------------------------------------------------------

MC_BLOCK = 1 << 14


def mc_estimates(
    env: Environment,
    pi: Policy,
    pi0: Policy,
    estimators: tuple[str, ...],
    n_reps: int,
    seed: int,
    model: RewardModel = RewardModel(),
    *,
    pi0_hat: Policy | None = None,
    lam: float = np.inf,
) -> dict[str, np.ndarray]:
    """Per-replication estimates on shared datasets, vectorized in blocks.

    One seeded stream drives all replications; blocks are consumed in a
    fixed order, so results are deterministic given the seed. Datasets are
    sampled under the true pi0; pi0_hat, when given, replaces the weight
    denominators (estimated-propensity regime).
    """
    n_c, n_j = env.q_s.shape
    denom = (pi0_hat or pi0).probs
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(denom > 0, pi.probs / denom, 0.0)
    dm_rows = None
    if model.q_hat_m is not None:
        dm_rows = np.einsum("cj,cj->c", pi.probs, model.q_hat_m)

    cum = np.cumsum(pi0.probs, axis=1)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    cidx = np.arange(n_c)
    out = {e: np.empty(n_reps) for e in estimators}

    done = 0
    while done < n_reps:
        b = min(MC_BLOCK, n_reps - done)
        u = rng.random((b, n_c))
        jx = np.empty((b, n_c), dtype=np.int64)
        for c in range(n_c):
            jx[:, c] = np.searchsorted(cum[c], u[:, c], side="right")
        np.clip(jx, 0, n_j - 1, out=jx)
        s = (rng.random((b, n_c)) < env.q_s[cidx, jx]).astype(np.float64)
        r = s * (rng.random((b, n_c)) < env.q_r[cidx, jx])
        m = s * r
        w_at = w[cidx, jx]
        for est in estimators:
            if est == "dm":
                out[est][done : done + b] = dm_rows.mean()
            elif est == "ips":
                out[est][done : done + b] = (w_at * m).mean(axis=1)
            elif est == "dr":
                q_at = model.q_hat_m[cidx, jx]
                out[est][done : done + b] = (
                    w_at * (m - q_at) + dm_rows
                ).mean(axis=1)
            elif est == "dips":
                r_at = model.q_hat_r[cidx, jx]
                out[est][done : done + b] = (w_at * s * r_at).mean(axis=1)
            elif est == "dpr":
                r_at = model.q_hat_r[cidx, jx]
                q_at = model.q_hat_m[cidx, jx]
                out[est][done : done + b] = (
                    w_at * (s * r_at - q_at) + dm_rows
                ).mean(axis=1)
            elif est == "switch_dr":
                q_at = model.q_hat_m[cidx, jx]
                corr = np.where(w_at <= lam, w_at * (m - q_at), 0.0)
                out[est][done : done + b] = (corr + dm_rows).mean(axis=1)
            elif est == "ext_switch_dr":
                r_at = model.q_hat_r[cidx, jx]
                q_at = model.q_hat_m[cidx, jx]
                corr = np.where(w_at <= lam, w_at * (s * r_at - q_at), 0.0)
                out[est][done : done + b] = (corr + dm_rows).mean(axis=1)
            else:
                raise ConfigurationError(
                    f"mc_estimates does not support {est!r}"
                )
        done += b
    return out


@dataclass(frozen=True)
class MonteCarloProfile:
    estimator: str
    n_reps: int
    mean: float
    bias: float
    variance: float | None
    mse: float
    se_mean: float | None


def monte_carlo_profile(
    env: Environment,
    pi: Policy,
    pi0: Policy,
    model: RewardModel,
    estimator: str,
    n_reps: int,
    seed: int,
    *,
    pi0_hat: Policy | None = None,
    lam: float = np.inf,
) -> MonteCarloProfile:
    """Empirical moments of an estimator over replicated logged datasets."""
    if n_reps < 1:
        raise ValidationError("n_reps must be >= 1")
    ests = mc_estimates(
        env, pi, pi0, (estimator,), n_reps, seed, model, pi0_hat=pi0_hat, lam=lam
    )[estimator]
    truth = true_policy_value(env, pi)
    mean = float(ests.mean())
    bias = mean - truth
    if n_reps == 1:
        return MonteCarloProfile(
            estimator=estimator,
            n_reps=1,
            mean=mean,
            bias=bias,
            variance=None,
            mse=bias**2,
            se_mean=None,
        )
    variance = float(ests.var())
    return MonteCarloProfile(
        estimator=estimator,
        n_reps=n_reps,
        mean=mean,
        bias=bias,
        variance=variance,
        mse=bias**2 + variance,
        se_mean=float(ests.std(ddof=1) / np.sqrt(n_reps)),
    )
