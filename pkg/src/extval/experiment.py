"""Synthetic study: estimated vs. actual external AUC under correlation shift."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import glm
from .balancer import SolverConfig, balance
from .data import TransformSpec, stats_from_sample
from .metrics import ScoredSample, weighted_auc
from .rng import derive_seed
from .simulator import SemConfig, generate_experiment_triplet

logger = logging.getLogger(__name__)

DEFAULT_SIGMAS = (0.0, 0.5, 1.0)
DEFAULT_SIZES = (200, 500, 1000, 2000, 5000)


@dataclass(frozen=True)
class RepetitionResult:
    sigma_xah: float
    n: int
    repetition_index: int
    internal_auc: float
    external_auc: float
    estimated_auc: float
    abs_error: float
    kl_divergence: float
    solver_status: str

    @property
    def internal_gap(self) -> float:
        return abs(self.internal_auc - self.external_auc)

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma_xah,
            "n": self.n,
            "repetition": self.repetition_index,
            "internalAuc": self.internal_auc,
            "externalAuc": self.external_auc,
            "estimatedAuc": self.estimated_auc,
            "absError": self.abs_error,
            "klDivergence": self.kl_divergence,
            "solverStatus": self.solver_status,
        }


def run_repetition(
    cfg: SemConfig,
    n: int,
    seed: int,
    repetition_index: int = 0,
    solver: SolverConfig = SolverConfig(),
    alpha_l1: float = 1e-3,
    alpha_l2: float = 1e-3,
    external_environment: int = 1,
) -> RepetitionResult:
    """Train on internal data, then compare estimated and actual external AUC.

    The model's coefficients come from ``cfg.seed`` and the three datasets
    (each of size ``n``) from ``seed``.  The external set contributes only
    its per-class first and second moments and its prevalence.
    """
    data = generate_experiment_triplet(cfg, n, n, n, data_seed=seed, external_environment=external_environment)
    model = glm.train(data.internal_train, alpha_l1, alpha_l2)
    test, external = data.internal_test, data.external
    test_scores = glm.predict_proba(model, test.features)
    ext_scores = glm.predict_proba(model, external.features)
    internal_auc = weighted_auc(ScoredSample.uniform(test_scores, test.outcomes))
    external_auc = weighted_auc(ScoredSample.uniform(ext_scores, external.outcomes))
    spec = TransformSpec.class_moments(test.feature_names)
    target = stats_from_sample(external, spec)
    try:
        sol = balance(test, target, solver).solution
        estimated = weighted_auc(ScoredSample(test_scores, test.outcomes, sol.weights))
        status, kl = sol.status.value, sol.kl_divergence
    except ValueError as exc:
        logger.warning("balancing failed for sigma=%s n=%d rep=%d: %s", cfg.sigma_xah, n, repetition_index, exc)
        estimated, status, kl = float("nan"), f"Error: {exc}", float("nan")
    return RepetitionResult(
        sigma_xah=cfg.sigma_xah,
        n=n,
        repetition_index=repetition_index,
        internal_auc=internal_auc,
        external_auc=external_auc,
        estimated_auc=estimated,
        abs_error=abs(external_auc - estimated),
        kl_divergence=kl,
        solver_status=status,
    )


@dataclass(frozen=True)
class CellSummary:
    sigma: float
    n: int
    mean_kl: float
    mean_internal_auc: float
    mean_external_auc: float
    mean_abs_error: float
    mean_internal_gap: float
    q25: float
    q50: float
    q75: float
    reps: int

    def to_json(self) -> dict:
        return {
            "sigma": self.sigma,
            "n": self.n,
            "meanKl": self.mean_kl,
            "meanInternalAuc": self.mean_internal_auc,
            "meanExternalAuc": self.mean_external_auc,
            "meanAbsError": self.mean_abs_error,
            "meanInternalGap": self.mean_internal_gap,
            "q25": self.q25,
            "q50": self.q50,
            "q75": self.q75,
            "reps": self.reps,
        }


@dataclass(frozen=True)
class ExperimentSummary:
    cells: tuple[CellSummary, ...]
    raw: tuple[RepetitionResult, ...]

    def cell(self, sigma: float, n: int) -> CellSummary:
        for c in self.cells:
            if c.sigma == sigma and c.n == n:
                return c
        raise KeyError((sigma, n))

    def results(self, sigma: float, n: int) -> list[RepetitionResult]:
        return [r for r in self.raw if r.sigma_xah == sigma and r.n == n]

    def to_json(self) -> dict:
        return {"cells": [c.to_json() for c in self.cells], "raw": [r.to_json() for r in self.raw]}

    def write_csv(self, path: str | Path) -> None:
        fields = list(RepetitionResult.__dataclass_fields__)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for r in self.raw:
                writer.writerow(asdict(r))


def summarize(results: Iterable[RepetitionResult]) -> tuple[CellSummary, ...]:
    """Aggregate per (sigma, n); repetitions with a failed solve are left out of the means."""
    groups: dict[tuple[float, int], list[RepetitionResult]] = {}
    for r in results:
        groups.setdefault((r.sigma_xah, r.n), []).append(r)
    cells = []
    for (sigma, n), rs in sorted(groups.items()):
        ok = [r for r in rs if np.isfinite(r.estimated_auc)]
        err = np.array([r.abs_error for r in ok])
        q25, q50, q75 = np.percentile(err, [25, 50, 75]) if len(err) else (np.nan,) * 3
        cells.append(
            CellSummary(
                sigma=sigma,
                n=n,
                mean_kl=float(np.mean([r.kl_divergence for r in ok])) if ok else float("nan"),
                mean_internal_auc=float(np.mean([r.internal_auc for r in rs])),
                mean_external_auc=float(np.mean([r.external_auc for r in rs])),
                mean_abs_error=float(err.mean()) if len(err) else float("nan"),
                mean_internal_gap=float(np.mean([r.internal_gap for r in rs])),
                q25=float(q25),
                q50=float(q50),
                q75=float(q75),
                reps=len(rs),
            )
        )
    return tuple(cells)


def run_grid(
    sigmas: Sequence[float],
    ns: Sequence[int],
    repetitions: int,
    seed: int,
    threads: int = 1,
    p: int = 10,
    solver: SolverConfig = SolverConfig(),
    alpha_l1: float = 1e-3,
    alpha_l2: float = 1e-3,
) -> ExperimentSummary:
    """Every (sigma, n, repetition) cell with order-independent sub-seeds.

    Repetition ``r`` at a given sigma draws one coefficient set shared by all
    sample sizes; the data streams additionally depend on ``n``.
    """
    if not sigmas or not ns or repetitions < 1:
        raise ValueError("need at least one sigma, one n and one repetition")
    jobs = [
        (si, sigma, n, r)
        for si, sigma in enumerate(sigmas)
        for n in ns
        for r in range(repetitions)
    ]

    def one(job: tuple[int, float, int, int]) -> RepetitionResult:
        si, sigma, n, r = job
        cfg = SemConfig(p=p, sigma_xah=float(sigma), seed=derive_seed(seed, si, r))
        return run_repetition(cfg, n, derive_seed(seed, si, r, n), r, solver, alpha_l1, alpha_l2)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(one, jobs))
    else:
        raw = [one(job) for job in jobs]
    return ExperimentSummary(summarize(raw), tuple(raw))


def format_table(summary: ExperimentSummary) -> str:
    lines = [f"{'sigma':>6} {'n':>6} {'D_KL':>7} {'intAUC':>7} {'extAUC':>7} {'error':>7} {'q25':>7} {'q75':>7} {'reps':>5}"]
    for c in summary.cells:
        lines.append(
            f"{c.sigma:>6.2f} {c.n:>6d} {c.mean_kl:>7.3f} {c.mean_internal_auc:>7.3f} {c.mean_external_auc:>7.3f}"
            f" {c.mean_abs_error:>7.3f} {c.q25:>7.3f} {c.q75:>7.3f} {c.reps:>5d}"
        )
    return "\n".join(lines)
