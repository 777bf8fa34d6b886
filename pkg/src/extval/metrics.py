"""Weighted performance measures and bootstrap intervals."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .balancer import SolverConfig, balance
from .data import MomentTarget, Sample

logger = logging.getLogger(__name__)

LOG_LOSS_EPS = 1e-15


class Metric(str, Enum):
    AUC = "auc"
    LOG_LOSS = "logloss"
    BRIER = "brier"


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredSample:
    scores: np.ndarray
    outcomes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        outcomes = np.asarray(self.outcomes)
        weights = np.asarray(self.weights, dtype=float)
        if not (scores.shape == outcomes.shape == weights.shape) or scores.ndim != 1:
            raise MetricError("scores, outcomes and weights must be equal-length vectors")
        if (weights < 0).any():
            raise MetricError("weights must be nonnegative")
        if not np.isin(outcomes, (0, 1)).all():
            raise MetricError("outcomes must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "outcomes", outcomes.astype(np.int8))
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, scores, outcomes) -> "ScoredSample":
        n = len(scores)
        return cls(scores, outcomes, np.full(n, 1.0 / n))


def _class_totals(s: ScoredSample) -> tuple[float, float]:
    pos = s.outcomes == 1
    w1, w0 = float(s.weights[pos].sum()), float(s.weights[~pos].sum())
    if w1 <= 0 or w0 <= 0:
        raise MetricError("AUC undefined: both classes need positive weight")
    return w1, w0


def weighted_auc(s: ScoredSample) -> float:
    """Weighted Mann-Whitney AUC, ties counted one half, in O(n log n).

    Rows are grouped by distinct score.  Each positive weight in a group is
    credited with all negative weight in lower groups plus half of the
    negative weight in its own group.
    """
    w1, w0 = _class_totals(s)
    uniq, group = np.unique(s.scores, return_inverse=True)
    pos = s.outcomes == 1
    pos_w = np.bincount(group, weights=np.where(pos, s.weights, 0.0), minlength=len(uniq))
    neg_w = np.bincount(group, weights=np.where(pos, 0.0, s.weights), minlength=len(uniq))
    neg_below = np.cumsum(neg_w) - neg_w
    return float(np.sum(pos_w * (neg_below + 0.5 * neg_w)) / (w1 * w0))


def weighted_auc_naive(s: ScoredSample) -> float:
    """Explicit pairwise enumeration; O(n^2), used as an oracle."""
    w1, w0 = _class_totals(s)
    pos = s.outcomes == 1
    sp, wp = s.scores[pos], s.weights[pos]
    sn, wn = s.scores[~pos], s.weights[~pos]
    total = 0.0
    for score, weight in zip(sp, wp):
        credit = np.where(score > sn, 1.0, np.where(score == sn, 0.5, 0.0))
        total += weight * float(np.sum(wn * credit))
    return total / (w1 * w0)


def pointwise_losses(scores: np.ndarray, outcomes: np.ndarray, metric: Metric | str) -> np.ndarray:
    metric = Metric(metric)
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(outcomes, dtype=float)
    if metric is Metric.LOG_LOSS:
        p = np.clip(scores, LOG_LOSS_EPS, 1.0 - LOG_LOSS_EPS)
        return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    if metric is Metric.BRIER:
        return (scores - y) ** 2
    raise MetricError(f"{metric.value} is not a pointwise loss")


def expected_pointwise_loss(s: ScoredSample, metric: Metric | str) -> float:
    return float(s.weights @ pointwise_losses(s.scores, s.outcomes, metric))


def evaluate(s: ScoredSample, metric: Metric | str) -> float:
    metric = Metric(metric)
    if metric is Metric.AUC:
        return weighted_auc(s)
    return expected_pointwise_loss(s, metric)


@dataclass(frozen=True)
class MetricEstimate:
    metric: Metric
    value: float
    ci_lower: float
    ci_upper: float
    bootstrap_replicates: int
    failed_replicates: int = 0

    def to_json(self) -> dict:
        return {
            "metric": self.metric.value,
            "value": self.value,
            "ciLower": self.ci_lower,
            "ciUpper": self.ci_upper,
            "bootstrapReplicates": self.bootstrap_replicates,
            "failedReplicates": self.failed_replicates,
        }


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Generator for one bootstrap replicate; depends only on (seed, replicate)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate])))


def bootstrap_values(
    sample: Sample,
    target: MomentTarget,
    scores: np.ndarray,
    metrics: list[Metric],
    replicates: int,
    seed: int,
    cfg: SolverConfig = SolverConfig(),
    threads: int = 1,
) -> tuple[np.ndarray, int]:
    """Metric values for each replicate (rows) and the number of failed replicates.

    Failed replicates (solver error, one-class resample) are NaN rows.
    """
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    scores = np.asarray(scores, dtype=float)
    n = sample.n

    def one(b: int) -> np.ndarray:
        rows = replicate_rng(seed, b).integers(0, n, size=n)
        try:
            resampled = sample.take(rows)
            sol = balance(resampled, target, cfg).solution
            scored = ScoredSample(scores[rows], resampled.outcomes, sol.weights)
            return np.array([evaluate(scored, m) for m in metrics])
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("bootstrap replicate %d failed: %s", b, exc)
            return np.full(len(metrics), np.nan)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(replicates)))
    else:
        rows = [one(b) for b in range(replicates)]
    values = np.vstack(rows)
    failed = int(np.isnan(values).any(axis=1).sum())
    return values, failed


def percentile_interval(values: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(values, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def bootstrap_ci(
    sample: Sample,
    target: MomentTarget,
    scores: np.ndarray,
    metrics: list[Metric | str] | Metric | str,
    replicates: int = 1000,
    seed: int = 0,
    cfg: SolverConfig = SolverConfig(),
    threads: int = 1,
    max_failure_rate: float = 0.1,
) -> list[MetricEstimate] | MetricEstimate:
    """Point estimates on the full sample with 95% percentile bootstrap intervals.

    Each replicate resamples the internal rows with replacement and
    re-solves the weights against the fixed external target, so solver
    variability is part of the interval.  Passing a single metric returns a
    single estimate.
    """
    single = isinstance(metrics, (Metric, str))
    metric_list = [Metric(metrics)] if single else [Metric(m) for m in metrics]
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (sample.n,):
        raise MetricError(f"{scores.shape[0]} scores for {sample.n} internal rows")
    sol = balance(sample, target, cfg).solution
    point = ScoredSample(scores, sample.outcomes, sol.weights)
    values, failed = bootstrap_values(sample, target, scores, metric_list, replicates, seed, cfg, threads)
    if failed > max_failure_rate * replicates:
        raise MetricError(f"{failed} of {replicates} bootstrap replicates failed")
    ok = values[~np.isnan(values).any(axis=1)]
    out = []
    for j, metric in enumerate(metric_list):
        lo, hi = percentile_interval(ok[:, j])
        out.append(MetricEstimate(metric, evaluate(point, metric), lo, hi, replicates, failed))
    return out[0] if single else out
