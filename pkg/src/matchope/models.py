"""Cross-fitted reward models and logging-policy estimation.

Regularized logistic regression stands in for boosted trees: the bias theory
of the estimators depends only on the prediction error, and a linear model is
deterministic and dependency-free. Every prediction for a company comes from
a model trained on the other folds; fold assignment is a hash of the company
index, so fitting is deterministic regardless of record or thread order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

from .core import (
    ContextSet,
    LoggedDataset,
    Policy,
    RewardModel,
    ValidationError,
)

FEATURE_MODES = ("concat", "concat_plus_product", "poly")

# Block structure per mode: elementwise powers of the company context, powers
# of the seeker context, and (company power, seeker power) product blocks.
# The intercept is always the last feature.
_MODE_BLOCKS = {
    "concat": ((1,), (1,), ()),
    "concat_plus_product": ((1,), (1,), ((1, 1),)),
    "poly": ((1, 2, 3), (1, 2, 3), ((1, 1),)),
}


@dataclass(frozen=True)
class FitConfig:
    n_folds: int = 5
    l2_penalty: float = 10.0
    max_iters: int = 500
    tolerance: float = 1e-8
    feature_mode: str = "poly"
    clamp_min: float = 1e-4
    # Post-hoc shrinkage of q_hat_r and q_hat_m toward 0. Values below 1
    # trade a small downward bias for a quadratic variance reduction in the
    # estimators that plug the predictions in, and keep the fitted model
    # inside the non-overestimation class backing the variance-reduction
    # guarantee. Shrinking both predictions by the same factor keeps the
    # doubly robust corrections aligned.
    pessimism: float = 0.95

    def __post_init__(self):
        if self.n_folds < 2:
            raise ValidationError("n_folds must be >= 2")
        if not 0.0 < self.clamp_min < 0.5:
            raise ValidationError("clamp_min must lie in (0, 0.5)")
        if self.l2_penalty <= 0:
            raise ValidationError("l2_penalty must be > 0")
        if self.feature_mode not in FEATURE_MODES:
            raise ValidationError(f"feature_mode must be one of {FEATURE_MODES}")
        if not 0.0 < self.pessimism <= 1.0:
            raise ValidationError("pessimism must lie in (0, 1]")


def _mode_blocks(mode: str):
    try:
        return _MODE_BLOCKS[mode]
    except KeyError:
        raise ValidationError(f"unknown feature_mode {mode!r}") from None


def feature_length(dim: int, mode: str) -> int:
    pc, pj, prods = _mode_blocks(mode)
    return (len(pc) + len(pj) + len(prods)) * dim + 1


def build_pair_features(
    contexts: ContextSet, c: int, j: int, mode: str = "poly"
) -> np.ndarray:
    """Feature vector for one (company, seeker) pair, intercept last.

    Block order: company powers, seeker powers, product blocks, intercept.
    """
    if not 0 <= c < contexts.n_companies:
        raise IndexError(f"company index {c} out of range")
    if not 0 <= j < contexts.n_seekers:
        raise IndexError(f"seeker index {j} out of range")
    pc, pj, prods = _mode_blocks(mode)
    xc = contexts.company_contexts[c]
    xj = contexts.seeker_contexts[j]
    parts = [xc**a for a in pc]
    parts += [xj**b for b in pj]
    parts += [xc**a * xj**b for a, b in prods]
    return np.concatenate(parts + [np.ones(1)])


def pair_logits(
    xc: np.ndarray, xj: np.ndarray, w: np.ndarray, mode: str
) -> np.ndarray:
    """Logit matrix over all (row of xc) x (row of xj) pairs.

    Exploits the block feature structure so the full matrix never has to be
    materialized as explicit per-pair feature vectors.
    """
    dim = xc.shape[1]
    pc, pj, prods = _mode_blocks(mode)
    out = np.full((xc.shape[0], xj.shape[0]), w[-1])
    off = 0
    for a in pc:
        out += ((xc**a) @ w[off : off + dim])[:, None]
        off += dim
    for b in pj:
        out += ((xj**b) @ w[off : off + dim])[None, :]
        off += dim
    for a, b in prods:
        out += (xc**a) @ ((xj**b) * w[off : off + dim]).T
        off += dim
    return out


def _fit_logistic(
    x: np.ndarray, y: np.ndarray, cfg: FitConfig
) -> np.ndarray:
    """L2-regularized logistic regression; intercept (last column) unpenalized.

    Damped Newton (IRLS) with the exact Hessian: the penalized objective is
    strictly convex, so with a backtracking line search on the objective the
    iterates converge quadratically and deterministically.
    """
    n, p = x.shape
    pen = np.ones(p)
    pen[-1] = 0.0
    lam = cfg.l2_penalty / n

    def loss_of(z, w):
        yz = np.where(y == 1, z, -z)
        return np.logaddexp(0.0, -yz).sum() / n + 0.5 * lam * np.sum(pen * w * w)

    w = np.zeros(p)
    z = x @ w
    loss = loss_of(z, w)
    for _ in range(cfg.max_iters):
        prob = expit(z)
        grad = x.T @ (prob - y) / n + lam * pen * w
        if np.abs(grad).max() <= cfg.tolerance:
            break
        curv = prob * (1.0 - prob)
        hess = (x * curv[:, None]).T @ x / n + np.diag(lam * pen)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        for _ in range(30):
            w_new = w - t * step
            z_new = x @ w_new
            loss_new = loss_of(z_new, w_new)
            if loss_new <= loss:
                break
            t *= 0.5
        if loss_new > loss:
            break
        w, z, loss = w_new, z_new, loss_new
    return w


def _folds(n_companies: int, n_folds: int) -> np.ndarray:
    """Deterministic fold id per company from a splitmix-style integer hash."""
    mask = np.uint64(0xFFFFFFFFFFFFFFFF)
    z = np.arange(n_companies, dtype=np.uint64)
    z = (z + np.uint64(0x9E3779B97F4A7C15)) & mask
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & mask
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & mask
    z = z ^ (z >> np.uint64(31))
    return (z % np.uint64(n_folds)).astype(np.int64)


def _logged_pair_features(
    contexts: ContextSet, chosen: np.ndarray, mode: str
) -> np.ndarray:
    pc, pj, prods = _mode_blocks(mode)
    xc = contexts.company_contexts
    xj = contexts.seeker_contexts[chosen]
    parts = [xc**a for a in pc]
    parts += [xj**b for b in pj]
    parts += [xc**a * xj**b for a, b in prods]
    parts.append(np.ones((xc.shape[0], 1)))
    return np.concatenate(parts, axis=1)


def fit_reward_models(
    dataset: LoggedDataset, contexts: ContextSet, cfg: FitConfig = FitConfig()
) -> RewardModel:
    """Cross-fitted q_hat_s, q_hat_m (all records) and q_hat_r (s=1 records).

    Predictions are produced for every pair and clamped to
    [clamp_min, 1 - clamp_min].
    """
    if dataset.n_companies == 0:
        raise ValidationError("dataset is empty")
    if contexts.n_companies != dataset.n_companies:
        raise ValidationError("contexts do not match the dataset")
    n_c, n_j = dataset.n_companies, contexts.n_seekers
    mode = cfg.feature_mode
    feats = _logged_pair_features(contexts, dataset.chosen_seeker, mode)
    folds = _folds(n_c, cfg.n_folds)
    xc, xj = contexts.company_contexts, contexts.seeker_contexts

    q_hat_s = np.empty((n_c, n_j))
    q_hat_m = np.empty((n_c, n_j))
    q_hat_r = np.empty((n_c, n_j))
    scouted = dataset.s == 1
    global_r_rate = float(dataset.r[scouted].mean()) if scouted.any() else 0.5
    fallback_folds = []

    for k in range(cfg.n_folds):
        hold = folds == k
        train = ~hold
        if not hold.any():
            continue
        if not train.any():
            # degenerate split (fewer companies than folds): train in-fold
            train = hold
        w_s = _fit_logistic(feats[train], dataset.s[train], cfg)
        w_m = _fit_logistic(feats[train], dataset.m[train], cfg)
        q_hat_s[hold] = expit(pair_logits(xc[hold], xj, w_s, mode))
        q_hat_m[hold] = expit(pair_logits(xc[hold], xj, w_m, mode))
        r_train = train & scouted
        if r_train.any():
            w_r = _fit_logistic(feats[r_train], dataset.r[r_train], cfg)
            q_hat_r[hold] = expit(pair_logits(xc[hold], xj, w_r, mode))
        else:
            fallback_folds.append(k)
            q_hat_r[hold] = global_r_rate

    if fallback_folds:
        warnings.warn(
            f"no s=1 training records for folds {fallback_folds}; "
            f"q_hat_r falls back to the global positive rate {global_r_rate:.4f}",
            stacklevel=2,
        )

    lo, hi = cfg.clamp_min, 1.0 - cfg.clamp_min
    q_hat_s = np.clip(q_hat_s, lo, hi)
    q_hat_m = np.clip(q_hat_m * cfg.pessimism, lo, hi)
    q_hat_r = np.clip(q_hat_r * cfg.pessimism, lo, hi)
    return RewardModel(
        q_hat_r=q_hat_r,
        q_hat_m=q_hat_m,
        q_hat_s=q_hat_s,
        diagnostics={"q_hat_r_fallback_folds": fallback_folds},
    )


def fit_logging_policy(
    dataset: LoggedDataset, contexts: ContextSet, cfg: FitConfig = FitConfig()
) -> Policy:
    """Cross-fitted multinomial logit over seekers with pair features."""
    if dataset.n_companies == 0:
        raise ValidationError("dataset is empty")
    n_c, n_j = dataset.n_companies, contexts.n_seekers
    mode = cfg.feature_mode
    dim = contexts.dim
    xc, xj = contexts.company_contexts, contexts.seeker_contexts
    folds = _folds(n_c, cfg.n_folds)
    probs = np.empty((n_c, n_j))

    def fit_fold(rows: np.ndarray) -> np.ndarray:
        xc_t = xc[rows]
        chosen = dataset.chosen_seeker[rows]
        n = len(chosen)
        pen = np.ones(feature_length(dim, mode))
        pen[-1] = 0.0

        pc, pj, prods = _mode_blocks(mode)

        def objective(w):
            z = pair_logits(xc_t, xj, w, mode)
            lse = logsumexp(z, axis=1)
            nll = (lse - z[np.arange(n), chosen]).sum() / n
            reg = 0.5 * cfg.l2_penalty * np.sum(pen * w * w) / n
            p = np.exp(z - lse[:, None])
            # residual distribution over seekers per company
            p[np.arange(n), chosen] -= 1.0
            pieces = []
            for a in pc:
                pieces.append((xc_t**a * p.sum(axis=1, keepdims=True)).sum(axis=0))
            for b in pj:
                pieces.append((p @ xj**b).sum(axis=0))
            for a, b in prods:
                pieces.append((xc_t**a * (p @ xj**b)).sum(axis=0))
            pieces.append(np.array([p.sum()]))
            grad = np.concatenate(pieces) / n + cfg.l2_penalty * pen * w / n
            return nll + reg, grad

        res = minimize(
            objective,
            np.zeros(feature_length(dim, mode)),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": cfg.max_iters, "gtol": cfg.tolerance, "ftol": 0.0},
        )
        return res.x

    for k in range(cfg.n_folds):
        hold = folds == k
        if not hold.any():
            continue
        w = fit_fold(~hold) if (~hold).any() else fit_fold(hold)
        z = pair_logits(xc[hold], xj, w, mode)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        probs[hold] = p / p.sum(axis=1, keepdims=True)

    probs = np.maximum(probs, cfg.clamp_min / n_j)
    probs = probs / probs.sum(axis=1, keepdims=True)
    return Policy(probs=probs, label="estimated-logging")
