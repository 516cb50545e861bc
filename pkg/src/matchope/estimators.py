"""Policy-value estimators for two-stage matching-market logs.

Nine estimators share one input bundle. Per-record terms are reduced in
ascending company order with exact (fsum) summation, so results are
reproducible bit-for-bit and the documented collapse identities (e.g. DR
with a zero match model equals IPS) hold as exact float equality.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ConfigurationError,
    LoggedDataset,
    Policy,
    RewardModel,
    ValidationError,
)

ESTIMATOR_IDS = (
    "dm",
    "ips",
    "dr",
    "dips",
    "dpr",
    "switch_dr",
    "ext_switch_dr",
    "mips",
    "ext_mips",
)

PROPENSITY_SOURCES = ("logged", "estimated")


@dataclass(frozen=True)
class EstimatorInput:
    """Everything an estimator may need for one evaluation.

    ``propensity_source`` selects between the propensities recorded in the
    log and the estimated logging policy in ``model.pi0_hat``. The MIPS
    family additionally needs full logging-policy rows, supplied via
    ``logging`` (or ``model.pi0_hat`` when estimated).
    """

    dataset: LoggedDataset
    target: Policy
    model: RewardModel = field(default_factory=RewardModel)
    propensity_source: str = "logged"
    logging: Policy | None = None

    def __post_init__(self):
        if self.propensity_source not in PROPENSITY_SOURCES:
            raise ValidationError(
                f"propensity_source must be one of {PROPENSITY_SOURCES}"
            )
        if self.target.probs.shape != (self.dataset.n_companies, self.dataset.n_seekers):
            raise ValidationError("target policy shape does not match the dataset")


@dataclass(frozen=True)
class EmbeddingMap:
    """Assignment of every job seeker to one of K nonempty clusters."""

    assignment: np.ndarray
    n_clusters: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1:
            raise ValidationError("assignment must be a 1-d vector")
        if (a < 0).any() or (a >= self.n_clusters).any():
            raise ValidationError("cluster id out of range")
        present = np.unique(a)
        if len(present) != self.n_clusters:
            missing = sorted(set(range(self.n_clusters)) - set(present.tolist()))
            raise ValidationError(f"empty clusters: {missing}")


def cluster_seekers(seeker_contexts: np.ndarray, n_clusters: int | None = None) -> EmbeddingMap:
    """Quantile-bucket seekers along their first principal direction."""
    x = np.asarray(seeker_contexts, dtype=float)
    n_j = x.shape[0]
    if n_clusters is None:
        n_clusters = math.ceil(n_j / 10)
    n_clusters = max(1, min(n_clusters, n_j))
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    scores = centered @ vt[0]
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(n_j, dtype=np.int64)
    ranks[order] = np.arange(n_j)
    assignment = (ranks * n_clusters) // n_j
    return EmbeddingMap(assignment=assignment, n_clusters=n_clusters)


def _logged_propensities(inp: EstimatorInput) -> np.ndarray:
    if inp.propensity_source == "logged":
        return inp.dataset.logging_prob
    if inp.model.pi0_hat is None:
        raise ConfigurationError(
            "propensity_source='estimated' requires RewardModel.pi0_hat"
        )
    idx = np.arange(inp.dataset.n_companies)
    return inp.model.pi0_hat.probs[idx, inp.dataset.chosen_seeker]


def _weights(inp: EstimatorInput) -> np.ndarray:
    p0 = _logged_propensities(inp)
    idx = np.arange(inp.dataset.n_companies)
    p = inp.target.probs[idx, inp.dataset.chosen_seeker]
    zero_both = (p == 0) & (p0 == 0)
    if zero_both.any():
        # Actions outside both supports contribute nothing; define w = 0.
        warnings.warn(
            f"{int(zero_both.sum())} records have zero probability under both "
            "policies; their weight is defined as 0",
            stacklevel=3,
        )
        p0 = np.where(zero_both, 1.0, p0)
        p = np.where(zero_both, 0.0, p)
    if (p0 <= 0).any():
        raise ValidationError("zero logging propensity violates common support")
    return p / p0


def _dm_rows(inp: EstimatorInput) -> np.ndarray:
    inp.model.require("q_hat_m")
    return np.einsum("cj,cj->c", inp.target.probs, inp.model.q_hat_m)


def _mean(terms: np.ndarray) -> float:
    return math.fsum(terms.tolist()) / len(terms)


def estimate_dm(inp: EstimatorInput) -> float:
    """Model-only estimate: average of E_pi[q_hat_m] per company."""
    return _mean(_dm_rows(inp))


def estimate_ips(inp: EstimatorInput) -> float:
    """Importance-weighted match labels."""
    return _mean(_weights(inp) * inp.dataset.m)


def estimate_dr(inp: EstimatorInput) -> float:
    """Doubly robust: weighted match residual plus the model term."""
    w = _weights(inp)
    idx = np.arange(inp.dataset.n_companies)
    q_at = inp.model.q_hat_m[idx, inp.dataset.chosen_seeker]
    return _mean(w * (inp.dataset.m - q_at) + _dm_rows(inp))


def estimate_dips(inp: EstimatorInput) -> float:
    """Importance-weighted first-stage label times the reply model."""
    inp.model.require("q_hat_r")
    w = _weights(inp)
    idx = np.arange(inp.dataset.n_companies)
    r_hat = inp.model.q_hat_r[idx, inp.dataset.chosen_seeker]
    return _mean(w * inp.dataset.s * r_hat)


def estimate_dpr(inp: EstimatorInput) -> float:
    """DiPS with a doubly-robust control variate from the match model."""
    inp.model.require("q_hat_r", "q_hat_m")
    w = _weights(inp)
    idx = np.arange(inp.dataset.n_companies)
    r_hat = inp.model.q_hat_r[idx, inp.dataset.chosen_seeker]
    m_hat = inp.model.q_hat_m[idx, inp.dataset.chosen_seeker]
    return _mean(w * (inp.dataset.s * r_hat - m_hat) + _dm_rows(inp))


def estimate_switch_dr(inp: EstimatorInput, lam: float) -> float:
    """DR whose correction term is applied only where w <= lam."""
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    w = _weights(inp)
    idx = np.arange(inp.dataset.n_companies)
    q_at = inp.model.q_hat_m[idx, inp.dataset.chosen_seeker]
    corr = np.where(w <= lam, w * (inp.dataset.m - q_at), 0.0)
    return _mean(corr + _dm_rows(inp))


def estimate_extended_switch_dr(inp: EstimatorInput, lam: float) -> float:
    """Switch-DR with the match label replaced by s * q_hat_r."""
    if lam < 0:
        raise ValidationError("lambda must be >= 0")
    inp.model.require("q_hat_r", "q_hat_m")
    w = _weights(inp)
    idx = np.arange(inp.dataset.n_companies)
    r_hat = inp.model.q_hat_r[idx, inp.dataset.chosen_seeker]
    m_hat = inp.model.q_hat_m[idx, inp.dataset.chosen_seeker]
    corr = np.where(w <= lam, w * (inp.dataset.s * r_hat - m_hat), 0.0)
    return _mean(corr + _dm_rows(inp))


def _logging_policy_rows(inp: EstimatorInput) -> np.ndarray:
    if inp.propensity_source == "estimated":
        if inp.model.pi0_hat is None:
            raise ConfigurationError(
                "propensity_source='estimated' requires RewardModel.pi0_hat"
            )
        return inp.model.pi0_hat.probs
    if inp.logging is None:
        raise ConfigurationError(
            "the MIPS family needs full logging-policy rows; pass logging="
        )
    return inp.logging.probs


def _marginal_weights(inp: EstimatorInput, emb: EmbeddingMap) -> np.ndarray:
    """Ratio of target to logging cluster-marginal probabilities, per record."""
    if emb.assignment.shape[0] != inp.dataset.n_seekers:
        raise ValidationError("embedding does not cover every seeker")
    pi0 = _logging_policy_rows(inp)
    clusters = emb.assignment[inp.dataset.chosen_seeker]
    n_c = inp.dataset.n_companies
    num = np.empty(n_c)
    den = np.empty(n_c)
    for c in range(n_c):
        members = emb.assignment == clusters[c]
        num[c] = inp.target.probs[c, members].sum()
        den[c] = pi0[c, members].sum()
    if (den <= 0).any():
        bad = int(np.argmax(den <= 0))
        raise ValidationError(
            f"logged action of company {bad} falls in a cluster with zero "
            "logging mass"
        )
    return num / den


def estimate_mips(inp: EstimatorInput, emb: EmbeddingMap) -> float:
    """IPS with weights marginalized over seeker clusters."""
    return _mean(_marginal_weights(inp, emb) * inp.dataset.m)


def estimate_extended_mips(inp: EstimatorInput, emb: EmbeddingMap) -> float:
    """MIPS with the match label replaced by s * q_hat_r."""
    inp.model.require("q_hat_r")
    idx = np.arange(inp.dataset.n_companies)
    r_hat = inp.model.q_hat_r[idx, inp.dataset.chosen_seeker]
    return _mean(_marginal_weights(inp, emb) * inp.dataset.s * r_hat)


def estimate(inp: EstimatorInput, estimator: str, *, lam: float = np.inf,
             emb: EmbeddingMap | None = None) -> float:
    """Dispatch by estimator id."""
    if estimator == "dm":
        return estimate_dm(inp)
    if estimator == "ips":
        return estimate_ips(inp)
    if estimator == "dr":
        return estimate_dr(inp)
    if estimator == "dips":
        return estimate_dips(inp)
    if estimator == "dpr":
        return estimate_dpr(inp)
    if estimator == "switch_dr":
        return estimate_switch_dr(inp, lam)
    if estimator == "ext_switch_dr":
        return estimate_extended_switch_dr(inp, lam)
    if estimator in ("mips", "ext_mips"):
        if emb is None:
            raise ConfigurationError(f"{estimator} requires an EmbeddingMap")
        if estimator == "mips":
            return estimate_mips(inp, emb)
        return estimate_extended_mips(inp, emb)
    raise ConfigurationError(f"unknown estimator {estimator!r}")
