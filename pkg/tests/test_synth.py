"""Synthetic environments, policies, and dataset sampling."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matchope import (
    Environment,
    Policy,
    SyntheticEnvSpec,
    ValidationError,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)


def test_environment_deterministic():
    spec = SyntheticEnvSpec(n_companies=8, n_seekers=5, dim=4, seed=7)
    env_a, params_a = generate_environment(spec)
    env_b, params_b = generate_environment(spec)
    assert np.array_equal(env_a.q_s, env_b.q_s)
    assert np.array_equal(env_a.q_r, env_b.q_r)
    assert np.array_equal(params_a.theta_s, params_b.theta_s)


def test_sparsity_drives_rewards_to_zero():
    lo, _ = generate_environment(SyntheticEnvSpec(n_companies=20, n_seekers=10, seed=3, theta_sp=0.0))
    hi, _ = generate_environment(SyntheticEnvSpec(n_companies=20, n_seekers=10, seed=3, theta_sp=30.0))
    # offsets are uniform on [0, 2], so a few near-zero offsets survive;
    # the bulk of the mass is pushed to zero
    assert np.median(hi.q_m) < 1e-8
    assert hi.q_m.mean() < lo.q_m.mean() / 10


def test_reply_offset_is_company_level():
    env, params = generate_environment(SyntheticEnvSpec(n_companies=6, n_seekers=4, seed=1))
    assert np.all(params.b_r == params.b_r[:, :1])
    assert not np.all(params.b_s == params.b_s[:, :1])


def test_softmax_beta_zero_uniform():
    env, _ = generate_environment(SyntheticEnvSpec(n_companies=4, n_seekers=6, seed=2))
    pi0 = softmax_logging_policy(env, beta=0.0)
    assert np.allclose(pi0.probs, 1.0 / 6, atol=1e-15)


def test_softmax_hand_computed_row():
    env = Environment(q_s=np.array([[0.8, 0.2]]), q_r=np.array([[1.0, 1.0]]))
    pi0 = softmax_logging_policy(env, beta=1.0)
    assert pi0.probs[0, 0] == pytest.approx(0.6457, abs=1e-4)
    assert pi0.probs[0, 1] == pytest.approx(0.3543, abs=1e-4)


def test_epsilon_greedy_limits():
    env, _ = generate_environment(SyntheticEnvSpec(n_companies=5, n_seekers=7, seed=4))
    uniform = epsilon_greedy_target_policy(env, epsilon=1.0)
    assert np.allclose(uniform.probs, 1.0 / 7, atol=1e-15)
    greedy = epsilon_greedy_target_policy(env, epsilon=0.0)
    assert np.allclose(greedy.probs.max(axis=1), 1.0)
    assert np.array_equal(greedy.probs.argmax(axis=1), env.q_m.argmax(axis=1))


def test_degenerate_sampling():
    ones = Environment(q_s=np.ones((5, 3)), q_r=np.ones((5, 3)))
    pi0 = Policy(probs=np.full((5, 3), 1.0 / 3))
    ds = sample_logged_data(ones, pi0, seed=0)
    assert (ds.s == 1).all() and (ds.r == 1).all() and (ds.m == 1).all()
    zeros = Environment(q_s=np.zeros((5, 3)), q_r=np.ones((5, 3)))
    ds0 = sample_logged_data(zeros, pi0, seed=0)
    assert (ds0.s == 0).all() and (ds0.m == 0).all()


def test_sampling_deterministic_and_propensities_match():
    env, _ = generate_environment(SyntheticEnvSpec(n_companies=12, n_seekers=6, seed=9))
    pi0 = softmax_logging_policy(env)
    a = sample_logged_data(env, pi0, seed=21)
    b = sample_logged_data(env, pi0, seed=21)
    assert np.array_equal(a.chosen_seeker, b.chosen_seeker)
    assert np.array_equal(a.s, b.s) and np.array_equal(a.r, b.r)
    idx = np.arange(a.n_companies)
    assert np.array_equal(a.logging_prob, pi0.probs[idx, a.chosen_seeker])


def test_single_company_mean_matches_expectation():
    env, _ = generate_environment(
        SyntheticEnvSpec(n_companies=1, n_seekers=4, dim=3, seed=11, theta_sp=0.5)
    )
    pi0 = softmax_logging_policy(env)
    n = 20_000
    total = 0
    for k in range(n):
        total += int(sample_logged_data(env, pi0, seed=k).m[0])
    expect = float(np.sum(pi0.probs * env.q_m))
    se = np.sqrt(expect * (1 - expect) / n)
    assert abs(total / n - expect) <= 3 * se + 1e-12


def test_spec_validation():
    with pytest.raises(ValidationError):
        SyntheticEnvSpec(n_seekers=1)
    with pytest.raises(ValidationError):
        SyntheticEnvSpec(epsilon=1.5)
    with pytest.raises(ValidationError):
        SyntheticEnvSpec(theta_sp=-1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(-2.0, 2.0))
def test_policies_row_stochastic(seed, beta):
    env, _ = generate_environment(
        SyntheticEnvSpec(n_companies=3, n_seekers=5, dim=2, seed=seed)
    )
    for p in (softmax_logging_policy(env, beta), epsilon_greedy_target_policy(env, 0.3)):
        assert np.allclose(p.probs.sum(axis=1), 1.0, atol=1e-9)
        assert (p.probs >= 0).all()
