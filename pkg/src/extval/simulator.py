"""Synthetic internal/external environments from a structural equation model.

    H = b_HA A + e_H
    X = b_XA A + b_XH H + b_XAH A H + e_X
    Y ~ Bernoulli(sigmoid(b_YA A + b_YH H + b_YX . X + b_YAX . (A X)))

``A = 0`` is the internal environment and ``A = 1`` the external one.  The
hidden ``H`` is never emitted.  Coefficient scales are standard deviations
unless :attr:`SemConfig.variance_reading` is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .rng import derive_seed, standard_normal, stream

COEF_STREAM = 0
TRAIN_STREAM, TEST_STREAM, EXTERNAL_STREAM = 1, 2, 3


@dataclass(frozen=True)
class SemCoefficients:
    beta_ha: float
    beta_xa: np.ndarray
    beta_xh: np.ndarray
    beta_xah: np.ndarray
    beta_ya: float
    beta_yh: float
    beta_yx: np.ndarray
    beta_yax: np.ndarray

    def __post_init__(self) -> None:
        vectors = ("beta_xa", "beta_xh", "beta_xah", "beta_yx", "beta_yax")
        arrays = {name: np.array(getattr(self, name), dtype=float) for name in vectors}
        sizes = {a.shape for a in arrays.values()}
        if len(sizes) != 1 or len(next(iter(sizes))) != 1:
            raise ValueError(f"coefficient vectors must share one length, got {sorted(sizes)}")
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def p(self) -> int:
        return self.beta_xa.shape[0]

    def to_json(self) -> dict:
        return {
            "betaHA": self.beta_ha,
            "betaXA": self.beta_xa.tolist(),
            "betaXH": self.beta_xh.tolist(),
            "betaXAH": self.beta_xah.tolist(),
            "betaYA": self.beta_ya,
            "betaYH": self.beta_yh,
            "betaYX": self.beta_yx.tolist(),
            "betaYAX": self.beta_yax.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SemCoefficients":
        return cls(
            float(obj["betaHA"]), obj["betaXA"], obj["betaXH"], obj["betaXAH"],
            float(obj["betaYA"]), float(obj["betaYH"]), obj["betaYX"], obj["betaYAX"],
        )


@dataclass(frozen=True)
class SemConfig:
    """Simulation settings.

    ``sd_*`` are the scales of the coefficient draws and ``sigma_xah`` the
    scale of the environment-by-hidden interaction.  With
    ``variance_reading=True`` every one of them is taken as a variance
    instead and square-rooted before use.
    """

    p: int = 10
    sigma_xah: float = 0.0
    seed: int = 0
    sd_ha: float = 0.2
    sd_ya: float = 0.2
    sd_xa: float = 0.2
    sd_xh: float = 1.0
    sd_yh: float = 1.0
    variance_reading: bool = False
    outcome_signal: tuple[float, ...] = (1.0, 1.0)
    outcome_shift: tuple[float, ...] = (-0.8, -0.2)

    def __post_init__(self) -> None:
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if self.sigma_xah < 0:
            raise ValueError(f"sigma_xah must be nonnegative, got {self.sigma_xah}")
        if min(self.sd_ha, self.sd_ya, self.sd_xa, self.sd_xh, self.sd_yh) < 0:
            raise ValueError("coefficient scales must be nonnegative")
        if len(self.outcome_signal) > self.p or len(self.outcome_shift) > self.p:
            raise ValueError("outcome coefficient prefixes longer than p")

    def scale(self, value: float) -> float:
        return math.sqrt(value) if self.variance_reading else value


def _padded(prefix: tuple[float, ...], p: int) -> np.ndarray:
    out = np.zeros(p)
    out[: len(prefix)] = prefix
    return out


def sample_coefficients(cfg: SemConfig) -> SemCoefficients:
    gen = stream(cfg.seed, COEF_STREAM)
    p = cfg.p
    draws = standard_normal(gen, 3 + 3 * p)
    return SemCoefficients(
        beta_ha=cfg.scale(cfg.sd_ha) * float(draws[0]),
        beta_ya=cfg.scale(cfg.sd_ya) * float(draws[1]),
        beta_yh=cfg.scale(cfg.sd_yh) * float(draws[2]),
        beta_xa=cfg.scale(cfg.sd_xa) * draws[3 : 3 + p],
        beta_xh=cfg.scale(cfg.sd_xh) * draws[3 + p : 3 + 2 * p],
        beta_xah=cfg.scale(cfg.sigma_xah) * draws[3 + 2 * p : 3 + 3 * p],
        beta_yx=_padded(cfg.outcome_signal, p),
        beta_yax=_padded(cfg.outcome_shift, p),
    )


def feature_names(p: int) -> tuple[str, ...]:
    return tuple(f"x{j + 1}" for j in range(p))


def sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def generate(model: SemCoefficients, n: int, environment: int, seed: int) -> Sample:
    if n < 1:
        raise ValueError("n must be positive")
    if environment not in (0, 1):
        raise ValueError("environment must be 0 or 1")
    gen = stream(seed)
    a = float(environment)
    p = model.p
    noise = standard_normal(gen, (n, p + 1))
    h = model.beta_ha * a + noise[:, 0]
    x = model.beta_xa * a + np.outer(h, model.beta_xh + a * model.beta_xah) + noise[:, 1:]
    logit = model.beta_ya * a + model.beta_yh * h + x @ (model.beta_yx + a * model.beta_yax)
    y = (gen.random(n) < sigmoid(logit)).astype(np.int8)
    return Sample(x, y, feature_names(p))


@dataclass(frozen=True)
class GeneratedData:
    internal_train: Sample
    internal_test: Sample
    external: Sample
    model: SemCoefficients


def generate_experiment_triplet(
    cfg: SemConfig,
    n_train: int,
    n_test: int,
    n_external: int,
    data_seed: int | None = None,
    external_environment: int = 1,
) -> GeneratedData:
    """One coefficient draw and three independent samples.

    Coefficients come from ``cfg.seed``; the samples from ``data_seed``
    (defaults to ``cfg.seed``), one stream per dataset.
    """
    if min(n_train, n_test, n_external) < 1:
        raise ValueError("sample sizes must be positive")
    model = sample_coefficients(cfg)
    base = cfg.seed if data_seed is None else data_seed
    return GeneratedData(
        internal_train=generate(model, n_train, 0, derive_seed(base, TRAIN_STREAM)),
        internal_test=generate(model, n_test, 0, derive_seed(base, TEST_STREAM)),
        external=generate(model, n_external, external_environment, derive_seed(base, EXTERNAL_STREAM)),
        model=model,
    )


def expected_features(model: SemCoefficients, environment: int) -> np.ndarray:
    """Analytic E[X | A]."""
    a = float(environment)
    return model.beta_xa * a + (model.beta_xh + a * model.beta_xah) * model.beta_ha * a


def feature_covariance(model: SemCoefficients, environment: int) -> np.ndarray:
    """Analytic Cov(X | A): loading outer product plus identity noise."""
    load = model.beta_xh + float(environment) * model.beta_xah
    return np.outer(load, load) + np.eye(model.p)
