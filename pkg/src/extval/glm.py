"""Elastic-net logistic regression fitted by proximal gradient descent."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Sample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    alpha_l1: float = 0.0
    alpha_l2: float = 0.0
    iterations: int = 0
    converged: bool = True
    objective_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        coef = np.array(self.coefficients, dtype=float)
        if not (np.isfinite(coef).all() and math.isfinite(self.intercept)):
            raise ValueError("model parameters must be finite")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    @property
    def warning(self) -> str | None:
        return None if self.converged else f"proximal gradient hit the iteration cap ({self.iterations})"

    def to_json(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "alphaL1": self.alpha_l1,
            "alphaL2": self.alpha_l2,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        return cls(obj["coefficients"], float(obj["intercept"]), float(obj["alphaL1"]), float(obj["alphaL2"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")


def mean_nll(x: np.ndarray, y: np.ndarray, coef: np.ndarray, intercept: float) -> float:
    eta = intercept + x @ coef
    # log(1 + e^eta) - y * eta, computed without overflow
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def nll_gradient(x: np.ndarray, y: np.ndarray, coef: np.ndarray, intercept: float) -> tuple[np.ndarray, float]:
    """Gradient of :func:`mean_nll` with respect to (coef, intercept)."""
    resid = _sigmoid(intercept + x @ coef) - y
    return x.T @ resid / len(y), float(resid.mean())


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def train(
    sample: Sample,
    alpha_l1: float = 1e-3,
    alpha_l2: float = 1e-3,
    max_iter: int = 10_000,
    tol: float = 1e-10,
    seed: int | None = None,
) -> LinearModel:
    """Fit  mean NLL + alpha_l1 ||b||_1 + alpha_l2/2 ||b||_2^2  (intercept unpenalized).

    ISTA with a backtracking Lipschitz estimate, so the objective never
    increases.  Stops when the relative objective change drops below
    ``tol``.  The fit is deterministic; ``seed`` is accepted for interface
    symmetry with the other trainers and ignored.
    """
    if alpha_l1 < 0 or alpha_l2 < 0:
        raise ValueError("penalties must be nonnegative")
    y = sample.outcomes.astype(float)
    if y.min() == y.max():
        raise ValueError("both outcome classes must be present")
    x = sample.features
    n, p = x.shape

    def smooth(coef: np.ndarray, b0: float) -> float:
        return mean_nll(x, y, coef, b0) + 0.5 * alpha_l2 * float(coef @ coef)

    def full(coef: np.ndarray, b0: float, smooth_value: float) -> float:
        return smooth_value + alpha_l1 * float(np.abs(coef).sum())

    coef = np.zeros(p)
    prev = float(y.mean())
    b0 = math.log(prev / (1.0 - prev))
    f_smooth = smooth(coef, b0)
    obj = full(coef, b0, f_smooth)
    trace = [obj]
    # Lipschitz bound of the mean logistic loss: ||[X 1]||_2^2 / (4n)
    lipschitz = 0.25 * (np.linalg.norm(np.column_stack([x, np.ones(n)]), 2) ** 2) / n + alpha_l2
    step_l = lipschitz
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g_coef, g_b0 = nll_gradient(x, y, coef, b0)
        g_coef = g_coef + alpha_l2 * coef
        while True:
            new_coef = _soft_threshold(coef - g_coef / step_l, alpha_l1 / step_l)
            new_b0 = b0 - g_b0 / step_l
            d_coef, d_b0 = new_coef - coef, new_b0 - b0
            new_smooth = smooth(new_coef, new_b0)
            bound = f_smooth + g_coef @ d_coef + g_b0 * d_b0 + 0.5 * step_l * (d_coef @ d_coef + d_b0 * d_b0)
            if new_smooth <= bound + 1e-15 * abs(bound):
                break
            step_l *= 2.0
        new_obj = full(new_coef, new_b0, new_smooth)
        if new_obj > obj:
            # rounding-level increase: keep the current iterate and stop
            converged = True
            break
        change = obj - new_obj
        coef, b0, f_smooth, obj = new_coef, new_b0, new_smooth, new_obj
        trace.append(obj)
        if change <= tol * max(abs(obj), 1e-300):
            converged = True
            break
        step_l = max(step_l / 1.5, 1e-12)
    if not converged:
        logger.warning("elastic-net fit stopped at the iteration cap (%d)", max_iter)
    return LinearModel(coef, float(b0), alpha_l1, alpha_l2, it, converged, tuple(trace))


def predict_proba(model: LinearModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2 or features.shape[1] != model.coefficients.shape[0]:
        raise ValueError(
            f"feature matrix has shape {features.shape}, model expects {model.coefficients.shape[0]} columns"
        )
    return _sigmoid(model.intercept + features @ model.coefficients)
