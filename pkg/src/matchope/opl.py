"""Softmax policies and off-policy learning via estimated policy gradients.

The policy class is linear-softmax over the same pair features as the reward
models. Each gradient estimator is the exact theta-gradient of its value
estimator on the fixed logged dataset, so central finite differences of the
value function recover it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ContextSet,
    LoggedDataset,
    Policy,
    RewardModel,
    ValidationError,
)
from .models import _mode_blocks, feature_length

GRADIENT_ESTIMATORS = ("dm_pg", "ips_pg", "dr_pg", "dips_pg", "dpr_pg")


@dataclass(frozen=True)
class SoftmaxPolicyParams:
    theta: np.ndarray
    feature_mode: str = "poly"

    def __post_init__(self):
        theta = np.ascontiguousarray(np.asarray(self.theta, dtype=np.float64))
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1:
            raise ValidationError("theta must be a vector")


@dataclass(frozen=True)
class LearnConfig:
    learning_rate: float = 0.05
    n_iterations: int = 200
    gradient_estimator: str = "dips_pg"
    seed: int = 0
    weight_clip: float | None = None
    feature_mode: str = "poly"

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.n_iterations < 1:
            raise ValidationError("n_iterations must be >= 1")
        if self.gradient_estimator not in GRADIENT_ESTIMATORS:
            raise ValidationError(
                f"gradient_estimator must be one of {GRADIENT_ESTIMATORS}"
            )
        if self.weight_clip is not None and self.weight_clip <= 0:
            raise ValidationError("weight_clip must be > 0")


def pair_feature_tensor(contexts: ContextSet, mode: str = "poly") -> np.ndarray:
    """All pair features as a (|C|, |J|, p) tensor, intercept last."""
    pc, pj, prods = _mode_blocks(mode)
    xc = contexts.company_contexts
    xj = contexts.seeker_contexts
    n_c, d = xc.shape
    n_j = xj.shape[0]
    parts = [np.broadcast_to((xc**a)[:, None, :], (n_c, n_j, d)) for a in pc]
    parts += [np.broadcast_to((xj**b)[None, :, :], (n_c, n_j, d)) for b in pj]
    parts += [(xc**a)[:, None, :] * (xj**b)[None, :, :] for a, b in prods]
    parts.append(np.ones((n_c, n_j, 1)))
    return np.concatenate(parts, axis=2)


def _probs_matrix(features: np.ndarray, theta: np.ndarray) -> np.ndarray:
    logits = features @ theta
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p


def policy_probs(params: SoftmaxPolicyParams, contexts: ContextSet) -> Policy:
    """Materialize pi_theta as a row-stochastic matrix."""
    features = pair_feature_tensor(contexts, params.feature_mode)
    if features.shape[2] != params.theta.shape[0]:
        raise ValidationError(
            f"theta has length {params.theta.shape[0]}, features have "
            f"length {features.shape[2]}"
        )
    return Policy(probs=_probs_matrix(features, params.theta), label="softmax-learned")


def score_function(
    params: SoftmaxPolicyParams, contexts: ContextSet, c: int, j: int
) -> np.ndarray:
    """Gradient of log pi_theta(j|c): f(c,j) minus the policy-mean feature."""
    features = pair_feature_tensor(contexts, params.feature_mode)
    probs = _probs_matrix(features, params.theta)
    return features[c, j] - probs[c] @ features[c]


def _scores_at_logged(
    features: np.ndarray, probs: np.ndarray, chosen: np.ndarray
) -> np.ndarray:
    """Score vectors at the logged actions, (|C|, p)."""
    mean_feat = np.einsum("cj,cjp->cp", probs, features)
    idx = np.arange(len(chosen))
    return features[idx, chosen] - mean_feat


def _weights_at_logged(
    probs: np.ndarray, dataset: LoggedDataset, clip: float | None
) -> np.ndarray:
    if (dataset.logging_prob <= 0).any():
        raise ValidationError("zero logging propensity")
    idx = np.arange(dataset.n_companies)
    w = probs[idx, dataset.chosen_seeker] / dataset.logging_prob
    if clip is not None:
        w = np.minimum(w, clip)
    return w


def _gradient(
    kind: str,
    dataset: LoggedDataset,
    features: np.ndarray,
    theta: np.ndarray,
    model: RewardModel,
    clip: float | None = None,
) -> np.ndarray:
    n_c = dataset.n_companies
    probs = _probs_matrix(features, theta)
    scores = _scores_at_logged(features, probs, dataset.chosen_seeker)
    idx = np.arange(n_c)

    def dm_term() -> np.ndarray:
        # sum_j pi q_hat_m (f(c,j) - mean_feat) averaged over companies
        model.require("q_hat_m")
        pq = probs * model.q_hat_m
        mean_feat = np.einsum("cj,cjp->cp", probs, features)
        term = np.einsum("cj,cjp->cp", pq, features) - pq.sum(axis=1)[:, None] * mean_feat
        return term.sum(axis=0) / n_c

    if kind == "dm_pg":
        return dm_term()
    w = _weights_at_logged(probs, dataset, clip)
    if kind == "ips_pg":
        coef = w * dataset.m
    elif kind == "dr_pg":
        model.require("q_hat_m")
        coef = w * (dataset.m - model.q_hat_m[idx, dataset.chosen_seeker])
    elif kind == "dips_pg":
        model.require("q_hat_r")
        coef = w * dataset.s * model.q_hat_r[idx, dataset.chosen_seeker]
    elif kind == "dpr_pg":
        model.require("q_hat_r", "q_hat_m")
        coef = w * (
            dataset.s * model.q_hat_r[idx, dataset.chosen_seeker]
            - model.q_hat_m[idx, dataset.chosen_seeker]
        )
    else:
        raise ValidationError(f"unknown gradient estimator {kind!r}")
    grad = (coef[:, None] * scores).sum(axis=0) / n_c
    if kind in ("dr_pg", "dpr_pg"):
        grad = grad + dm_term()
    return grad


def grad_dips_pg(
    dataset: LoggedDataset,
    params: SoftmaxPolicyParams,
    model: RewardModel,
    contexts: ContextSet,
) -> np.ndarray:
    features = pair_feature_tensor(contexts, params.feature_mode)
    return _gradient("dips_pg", dataset, features, params.theta, model)


def grad_dpr_pg(
    dataset: LoggedDataset,
    params: SoftmaxPolicyParams,
    model: RewardModel,
    contexts: ContextSet,
) -> np.ndarray:
    features = pair_feature_tensor(contexts, params.feature_mode)
    return _gradient("dpr_pg", dataset, features, params.theta, model)


def grad_baseline_pg(
    dataset: LoggedDataset,
    params: SoftmaxPolicyParams,
    model: RewardModel,
    contexts: ContextSet,
    kind: str,
) -> np.ndarray:
    if kind not in ("dm", "ips", "dr"):
        raise ValidationError("kind must be one of dm, ips, dr")
    features = pair_feature_tensor(contexts, params.feature_mode)
    return _gradient(f"{kind}_pg", dataset, features, params.theta, model)


def _companion_value(
    kind: str,
    dataset: LoggedDataset,
    probs: np.ndarray,
    model: RewardModel,
    clip: float | None,
) -> float:
    """Value estimate of the gradient estimator's companion value estimator."""
    n_c = dataset.n_companies
    idx = np.arange(n_c)
    dm_val = 0.0
    if model.q_hat_m is not None:
        dm_val = float(np.sum(probs * model.q_hat_m) / n_c)
    if kind == "dm_pg":
        return dm_val
    w = _weights_at_logged(probs, dataset, clip)
    if kind == "ips_pg":
        return float(np.mean(w * dataset.m))
    if kind == "dr_pg":
        q_at = model.q_hat_m[idx, dataset.chosen_seeker]
        return float(np.mean(w * (dataset.m - q_at))) + dm_val
    if kind == "dips_pg":
        r_at = model.q_hat_r[idx, dataset.chosen_seeker]
        return float(np.mean(w * dataset.s * r_at))
    if kind == "dpr_pg":
        r_at = model.q_hat_r[idx, dataset.chosen_seeker]
        q_at = model.q_hat_m[idx, dataset.chosen_seeker]
        return float(np.mean(w * (dataset.s * r_at - q_at))) + dm_val
    raise ValidationError(f"unknown gradient estimator {kind!r}")


def learn_policy(
    dataset: LoggedDataset,
    contexts: ContextSet,
    model: RewardModel,
    cfg: LearnConfig,
) -> tuple[SoftmaxPolicyParams, list[float]]:
    """Full-batch gradient ascent from theta = 0; deterministic given inputs.

    The trajectory holds, per iteration, the companion value estimate of the
    updated policy (the true value is unavailable off-policy).
    """
    features = pair_feature_tensor(contexts, cfg.feature_mode)
    theta = np.zeros(feature_length(contexts.dim, cfg.feature_mode))
    trajectory: list[float] = []
    for t in range(cfg.n_iterations):
        grad = _gradient(
            cfg.gradient_estimator, dataset, features, theta, model, cfg.weight_clip
        )
        if not np.isfinite(grad).all():
            raise ValidationError(
                f"non-finite gradient at iteration {t} "
                f"({cfg.gradient_estimator})"
            )
        theta = theta + cfg.learning_rate * grad
        probs = _probs_matrix(features, theta)
        trajectory.append(
            _companion_value(cfg.gradient_estimator, dataset, probs, model, cfg.weight_clip)
        )
    return SoftmaxPolicyParams(theta=theta, feature_mode=cfg.feature_mode), trajectory
