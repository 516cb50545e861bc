"""Core domain types for two-stage matching-market bandit feedback.

A record describes one company being shown one job seeker by a logging
policy. The company may send a scouting request (first-stage reward ``s``),
and if it does, the seeker may reply (second-stage reward ``r``). A match is
``m = s * r``. All types here are immutable after construction and all
operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROW_SUM_TOL = 1e-9


class ValidationError(ValueError):
    """Raised when input data violates a documented invariant."""


class ConfigurationError(ValueError):
    """Raised when a required model component or option is missing."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ContextSet:
    """Feature vectors for every company and every job seeker."""

    company_contexts: np.ndarray
    seeker_contexts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "company_contexts", _frozen(self.company_contexts))
        object.__setattr__(self, "seeker_contexts", _frozen(self.seeker_contexts))
        xc, xj = self.company_contexts, self.seeker_contexts
        if xc.ndim != 2 or xj.ndim != 2:
            raise ValidationError("context matrices must be 2-dimensional")
        if xc.shape[1] != xj.shape[1]:
            raise ValidationError(
                f"feature dimension mismatch: companies have {xc.shape[1]}, "
                f"seekers have {xj.shape[1]}"
            )
        if xc.shape[1] < 1:
            raise ValidationError("feature dimension must be >= 1")
        if xc.shape[0] < 1:
            raise ValidationError("need at least one company")
        if xj.shape[0] < 2:
            raise ValidationError("need at least two job seekers")
        if not (np.isfinite(xc).all() and np.isfinite(xj).all()):
            raise ValidationError("context features must be finite")

    @property
    def n_companies(self) -> int:
        return self.company_contexts.shape[0]

    @property
    def n_seekers(self) -> int:
        return self.seeker_contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.company_contexts.shape[1]


@dataclass(frozen=True)
class Environment:
    """Ground-truth expected-reward surfaces over all (company, seeker) pairs.

    ``q_s[c, j]`` is the probability that company ``c`` sends a scout to
    seeker ``j``; ``q_r[c, j]`` the probability of a reply given a scout.
    The match probability is the product ``q_m = q_s * q_r``.
    """

    q_s: np.ndarray
    q_r: np.ndarray
    contexts: ContextSet | None = None

    def __post_init__(self):
        object.__setattr__(self, "q_s", _frozen(self.q_s))
        object.__setattr__(self, "q_r", _frozen(self.q_r))
        for name, q in (("q_s", self.q_s), ("q_r", self.q_r)):
            if q.ndim != 2:
                raise ValidationError(f"{name} must be a 2-d matrix")
            if not np.isfinite(q).all() or (q < 0).any() or (q > 1).any():
                raise ValidationError(f"all entries of {name} must lie in [0, 1]")
        if self.q_s.shape != self.q_r.shape:
            raise ValidationError("q_s and q_r must have the same shape")
        if self.contexts is not None:
            if self.contexts.company_contexts.shape[0] != self.n_companies:
                raise ValidationError("contexts do not match the number of companies")
            if self.contexts.seeker_contexts.shape[0] != self.n_seekers:
                raise ValidationError("contexts do not match the number of seekers")

    @property
    def n_companies(self) -> int:
        return self.q_s.shape[0]

    @property
    def n_seekers(self) -> int:
        return self.q_s.shape[1]

    @property
    def q_m(self) -> np.ndarray:
        return self.q_s * self.q_r

    @property
    def sigma2_s(self) -> np.ndarray:
        return self.q_s * (1.0 - self.q_s)

    @property
    def sigma2_r(self) -> np.ndarray:
        return self.q_r * (1.0 - self.q_r)

    @property
    def sigma2_m(self) -> np.ndarray:
        qm = self.q_m
        return qm * (1.0 - qm)


@dataclass(frozen=True)
class Policy:
    """A conditional distribution over job seekers for every company."""

    probs: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))
        p = self.probs
        if p.ndim != 2:
            raise ValidationError("policy matrix must be 2-dimensional")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ValidationError("policy probabilities must be finite and >= 0")
        row_sums = p.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > ROW_SUM_TOL:
            worst = int(np.abs(row_sums - 1.0).argmax())
            raise ValidationError(
                f"policy row {worst} sums to {row_sums[worst]!r}, not 1"
            )

    @property
    def n_companies(self) -> int:
        return self.probs.shape[0]

    @property
    def n_seekers(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class LoggedDataset:
    """One logged record per company.

    ``r`` is stored as 0 whenever ``s == 0``: the reply is only defined given
    a scout, and no estimator reads ``r`` in that case, so a canonical 0
    keeps records total-ordered and serializable. ``logging_prob`` is the
    propensity of the logged action recorded at decision time.
    """

    chosen_seeker: np.ndarray
    s: np.ndarray
    r: np.ndarray
    m: np.ndarray
    logging_prob: np.ndarray
    n_seekers: int

    def __post_init__(self):
        object.__setattr__(self, "chosen_seeker", _frozen(self.chosen_seeker, np.int64))
        for name in ("s", "r", "m"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        object.__setattr__(self, "logging_prob", _frozen(self.logging_prob))
        n = self.chosen_seeker.shape[0]
        for name in ("s", "r", "m", "logging_prob"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"{name} must have one entry per company")
        for name in ("s", "r", "m"):
            v = getattr(self, name)
            if not np.isin(v, (0, 1)).all():
                raise ValidationError(f"{name} must be binary")
        if (self.m != self.s * self.r).any():
            raise ValidationError("m = s * r violated")
        if ((self.s == 0) & (self.r == 1)).any():
            raise ValidationError("r must be 0 whenever s = 0")
        if (self.logging_prob <= 0).any() or (self.logging_prob > 1).any():
            raise ValidationError("logging_prob must lie in (0, 1]")
        if self.n_seekers < 2:
            raise ValidationError("n_seekers must be >= 2")
        if (self.chosen_seeker < 0).any() or (self.chosen_seeker >= self.n_seekers).any():
            raise ValidationError("chosen_seeker index out of range")

    @property
    def n_companies(self) -> int:
        return self.chosen_seeker.shape[0]


def _check_unit_interval(name: str, q: np.ndarray) -> np.ndarray:
    q = _frozen(q)
    if not np.isfinite(q).all() or (q < 0).any() or (q > 1).any():
        raise ValidationError(f"all entries of {name} must lie in [0, 1]")
    return q


@dataclass(frozen=True)
class RewardModel:
    """Fitted (or oracle) predictions for every (company, seeker) pair."""

    q_hat_r: np.ndarray | None = None
    q_hat_m: np.ndarray | None = None
    q_hat_s: np.ndarray | None = None
    pi0_hat: Policy | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("q_hat_r", "q_hat_m", "q_hat_s"):
            q = getattr(self, name)
            if q is not None:
                object.__setattr__(self, name, _check_unit_interval(name, q))

    def require(self, *names: str) -> None:
        for name in names:
            if getattr(self, name) is None:
                raise ConfigurationError(f"this estimator requires RewardModel.{name}")


def true_policy_value(env: Environment, pi: Policy) -> float:
    """Exact expected number of matches per company under ``pi``."""
    if pi.probs.shape != env.q_s.shape:
        raise ValidationError(
            f"policy shape {pi.probs.shape} does not match environment "
            f"shape {env.q_s.shape}"
        )
    return float(np.sum(pi.probs * env.q_m) / env.n_companies)


def importance_weights(pi: Policy, dataset: LoggedDataset) -> np.ndarray:
    """Per-record ratio pi(j_c|c) / pi_0(j_c|c) at the logged actions."""
    if pi.probs.shape[0] != dataset.n_companies or pi.probs.shape[1] != dataset.n_seekers:
        raise ValidationError("policy shape does not match the dataset")
    if (dataset.logging_prob <= 0).any():
        raise ValidationError("logging propensities must be positive (common support)")
    idx = np.arange(dataset.n_companies)
    return pi.probs[idx, dataset.chosen_seeker] / dataset.logging_prob
