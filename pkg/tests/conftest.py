"""Shared fixtures and small-instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from matchope import (
    ContextSet,
    Environment,
    EstimatorInput,
    LoggedDataset,
    Policy,
    RewardModel,
    SyntheticEnvSpec,
    epsilon_greedy_target_policy,
    generate_environment,
    sample_logged_data,
    softmax_logging_policy,
)


def tiny_env(n_c=3, n_j=4, seed=0, dim=3, theta_sp=1.0):
    spec = SyntheticEnvSpec(
        n_companies=n_c, n_seekers=n_j, dim=dim, theta_sp=theta_sp, seed=seed
    )
    env, params = generate_environment(spec)
    return env, params


def tiny_instance(seed=0, n_c=3, n_j=4):
    """Environment, policies, noisy model, and one logged dataset."""
    env, _ = tiny_env(n_c=n_c, n_j=n_j, seed=seed)
    rng = np.random.default_rng(seed + 99)
    pi0 = softmax_logging_policy(env, beta=float(rng.uniform(-2, 2)))
    pi = epsilon_greedy_target_policy(env, epsilon=float(rng.uniform(0.1, 0.9)))
    model = RewardModel(
        q_hat_r=np.clip(env.q_r + rng.uniform(-0.2, 0.2, env.q_r.shape), 0.01, 0.99),
        q_hat_m=np.clip(env.q_m + rng.uniform(-0.2, 0.2, env.q_m.shape), 0.01, 0.99),
    )
    dataset = sample_logged_data(env, pi0, seed=seed + 1)
    return env, pi, pi0, model, dataset


def manual_single_record(w, s, r, q_hat_r=None, q_hat_m=None, dm_row=None, n_j=2):
    """A |C|=1 instance with a hand-set weight at the logged action.

    The logged action is seeker 0 with logging probability p0; the target
    probability at the logged action is w * p0.
    """
    p0 = 0.25
    target_row = np.full(n_j, (1.0 - w * p0) / (n_j - 1))
    target_row[0] = w * p0
    logging_row = np.full(n_j, (1.0 - p0) / (n_j - 1))
    logging_row[0] = p0
    dataset = LoggedDataset(
        chosen_seeker=np.array([0]),
        s=np.array([s]),
        r=np.array([r]),
        m=np.array([s * r]),
        logging_prob=np.array([p0]),
        n_seekers=n_j,
    )
    model_kwargs = {}
    if q_hat_r is not None:
        row = np.full((1, n_j), q_hat_r)
        model_kwargs["q_hat_r"] = row
    if q_hat_m is not None:
        model_kwargs["q_hat_m"] = np.asarray(q_hat_m, dtype=float).reshape(1, n_j)
    model = RewardModel(**model_kwargs)
    inp = EstimatorInput(
        dataset=dataset,
        target=Policy(probs=target_row[None, :]),
        model=model,
        logging=Policy(probs=logging_row[None, :]),
    )
    return inp


@pytest.fixture()
def small_instance():
    return tiny_instance(seed=5)
