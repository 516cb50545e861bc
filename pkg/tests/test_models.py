"""Reward-model and logging-policy fitting."""

import numpy as np
import pytest
from scipy.special import expit

from matchope import (
    ContextSet,
    FitConfig,
    LoggedDataset,
    SyntheticEnvSpec,
    ValidationError,
    build_pair_features,
    fit_logging_policy,
    fit_reward_models,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)
from matchope.models import FEATURE_MODES, feature_length, pair_logits

from conftest import tiny_instance


def test_concat_features_hand_example():
    ctx = ContextSet(
        company_contexts=np.array([[1.0, 0.0]]),
        seeker_contexts=np.array([[0.0, 1.0], [9.0, 9.0]]),
    )
    f = build_pair_features(ctx, 0, 0, mode="concat")
    assert np.array_equal(f, np.array([1.0, 0.0, 0.0, 1.0, 1.0]))


def test_concat_plus_product_hand_example():
    ctx = ContextSet(
        company_contexts=np.array([[1.0, 2.0]]),
        seeker_contexts=np.array([[3.0, 4.0], [0.0, 0.0]]),
    )
    f = build_pair_features(ctx, 0, 0, mode="concat_plus_product")
    assert np.array_equal(f, np.array([1.0, 2.0, 3.0, 4.0, 3.0, 8.0, 1.0]))


def test_zero_contexts_leave_only_intercept():
    ctx = ContextSet(company_contexts=np.zeros((1, 3)), seeker_contexts=np.zeros((2, 3)))
    for mode in FEATURE_MODES:
        f = build_pair_features(ctx, 0, 1, mode=mode)
        assert f[-1] == 1.0
        assert np.all(f[:-1] == 0.0)
        assert len(f) == feature_length(3, mode)


def test_pair_logits_matches_explicit_features():
    rng = np.random.default_rng(3)
    ctx = ContextSet(
        company_contexts=rng.normal(size=(4, 3)),
        seeker_contexts=rng.normal(size=(5, 3)),
    )
    for mode in FEATURE_MODES:
        w = rng.normal(size=feature_length(3, mode))
        z = pair_logits(ctx.company_contexts, ctx.seeker_contexts, w, mode)
        for c in range(4):
            for j in range(5):
                expected = build_pair_features(ctx, c, j, mode) @ w
                assert z[c, j] == pytest.approx(expected, abs=1e-12)


def test_unknown_mode_rejected():
    ctx = ContextSet(company_contexts=np.zeros((1, 2)), seeker_contexts=np.zeros((2, 2)))
    with pytest.raises(ValidationError):
        build_pair_features(ctx, 0, 0, mode="cubic")


def test_planted_model_recovery():
    """Labels from a known linear-logit truth: fitted q_hat_s tracks it."""
    rng = np.random.default_rng(17)
    n_c, n_j, d = 20_000, 6, 3
    xc = rng.normal(size=(n_c, d))
    xj = rng.normal(size=(n_j, d))
    ctx = ContextSet(company_contexts=xc, seeker_contexts=xj)
    w_true = np.array([0.8, -0.5, 0.3, 0.4, -0.6, 0.2, -0.5])
    logits = pair_logits(xc, xj, w_true, "concat")
    q_s = expit(logits)
    chosen = rng.integers(0, n_j, size=n_c)
    idx = np.arange(n_c)
    s = (rng.random(n_c) < q_s[idx, chosen]).astype(np.int64)
    dataset = LoggedDataset(
        chosen_seeker=chosen,
        s=s,
        r=np.zeros(n_c, dtype=np.int64),
        m=np.zeros(n_c, dtype=np.int64),
        logging_prob=np.full(n_c, 1.0 / n_j),
        n_seekers=n_j,
    )
    model = fit_reward_models(
        dataset, ctx, FitConfig(feature_mode="concat", l2_penalty=1.0, pessimism=1.0)
    )
    mae = float(np.abs(model.q_hat_s - q_s).mean())
    assert mae <= 0.05


def test_cross_fit_deterministic(small_instance):
    env, pi, pi0, _, dataset = small_instance
    a = fit_reward_models(dataset, env.contexts)
    b = fit_reward_models(dataset, env.contexts)
    assert np.array_equal(a.q_hat_r, b.q_hat_r)
    assert np.array_equal(a.q_hat_m, b.q_hat_m)


def test_clamp_contract():
    env, _, pi0, _, dataset = tiny_instance(seed=12, n_c=40, n_j=5)
    model = fit_reward_models(dataset, env.contexts, FitConfig(n_folds=2))
    for q in (model.q_hat_s, model.q_hat_m, model.q_hat_r):
        assert (q >= 1e-4).all() and (q <= 1.0 - 1e-4).all()


def test_all_positive_replies_push_predictions_up():
    spec = SyntheticEnvSpec(n_companies=60, n_seekers=5, dim=3, seed=8, theta_sp=0.0)
    env, _ = generate_environment(spec)
    forced = type(env)(q_s=env.q_s, q_r=np.ones_like(env.q_r), contexts=env.contexts)
    pi0 = softmax_logging_policy(forced)
    dataset = sample_logged_data(forced, pi0, seed=2)
    assert dataset.s.sum() > 0
    model = fit_reward_models(dataset, env.contexts, FitConfig(n_folds=2))
    idx = np.arange(dataset.n_companies)
    logged_preds = model.q_hat_r[idx, dataset.chosen_seeker][dataset.s == 1]
    assert (logged_preds >= 0.5).all()


def test_fallback_when_no_scouts_warns():
    env, _, pi0, _, _ = tiny_instance(seed=3, n_c=10, n_j=4)
    dataset = LoggedDataset(
        chosen_seeker=np.zeros(10, dtype=np.int64),
        s=np.zeros(10, dtype=np.int64),
        r=np.zeros(10, dtype=np.int64),
        m=np.zeros(10, dtype=np.int64),
        logging_prob=np.full(10, 0.25),
        n_seekers=4,
    )
    with pytest.warns(UserWarning, match="q_hat_r falls back"):
        model = fit_reward_models(dataset, env.contexts, FitConfig(n_folds=2))
    assert model.diagnostics["q_hat_r_fallback_folds"]


def test_logging_policy_recovers_planted_uniform():
    rng = np.random.default_rng(30)
    n_c, n_j, d = 10_000, 5, 3
    ctx = ContextSet(
        company_contexts=rng.normal(size=(n_c, d)),
        seeker_contexts=rng.normal(size=(n_j, d)),
    )
    chosen = rng.integers(0, n_j, size=n_c)
    dataset = LoggedDataset(
        chosen_seeker=chosen,
        s=np.zeros(n_c, dtype=np.int64),
        r=np.zeros(n_c, dtype=np.int64),
        m=np.zeros(n_c, dtype=np.int64),
        logging_prob=np.full(n_c, 1.0 / n_j),
        n_seekers=n_j,
    )
    pi0_hat = fit_logging_policy(dataset, ctx, FitConfig(feature_mode="concat", n_folds=2))
    assert np.abs(pi0_hat.probs - 0.2).max() <= 0.05
    assert np.allclose(pi0_hat.probs.sum(axis=1), 1.0, atol=1e-9)
    assert (pi0_hat.probs > 0).all()


def test_fit_config_validation():
    with pytest.raises(ValidationError):
        FitConfig(n_folds=1)
    with pytest.raises(ValidationError):
        FitConfig(l2_penalty=0.0)
    with pytest.raises(ValidationError):
        FitConfig(pessimism=0.0)
    with pytest.raises(ValidationError):
        FitConfig(feature_mode="nope")
