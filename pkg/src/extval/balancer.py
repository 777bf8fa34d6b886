"""Entropy balancing of an internal sample against external moments.

The exact solver works on the dual of

    min_w  sum_i w_i log(n w_i)   s.t.  Z^T w = mu,  sum_i w_i = 1,  w >= 0

whose optimum has the exponential form ``w_i = exp(-1 - (z_i, 1) . nu)``.
When no such ``w`` exists the relaxed solver trades the squared moment
residual against the divergence with entropic mirror descent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from .data import (
    DataError,
    MomentTarget,
    PruneResult,
    Sample,
    Term,
    TransformedMatrix,
    TransformSpec,
    apply_transforms,
    prune_low_variance_columns,
)

logger = logging.getLogger(__name__)

_ARMIJO = 1e-4
_MIN_STEP = 1e-12


class Status(str, Enum):
    EXACT = "Exact"
    RELAXED = "Relaxed"
    INFEASIBLE = "Infeasible"


class InfeasibleTargetError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 1e-6
    min_weight: float = 1e-6
    sd_cutoff: float = 1e-4
    grad_tol: float = 1e-9
    residual_tol: float = 1e-6
    max_newton_iter: int = 200
    max_mirror_iter: int = 50_000
    mirror_step_rule: str = "backtracking"
    mirror_step: float | None = None

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.min_weight < 0 or self.sd_cutoff < 0:
            raise ValueError("minWeight and sdCutoff must be nonnegative")
        if self.grad_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_newton_iter < 1 or self.max_mirror_iter < 1:
            raise ValueError("iteration caps must be positive")
        if self.mirror_step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown mirror step rule {self.mirror_step_rule!r}")
        if self.mirror_step_rule == "fixed" and not (self.mirror_step and self.mirror_step > 0):
            raise ValueError("fixed step rule needs a positive mirror_step")


@dataclass(frozen=True)
class Violation:
    term_index: int
    term: str
    internal_min: float
    internal_max: float
    target_value: float

    def to_json(self) -> dict:
        return {
            "termIndex": self.term_index,
            "term": self.term,
            "internalMin": self.internal_min,
            "internalMax": self.internal_max,
            "targetValue": self.target_value,
        }


@dataclass(frozen=True)
class WeightSolution:
    weights: np.ndarray
    dual: np.ndarray
    kl_divergence: float
    residual: np.ndarray
    residual_norm: float
    status: Status
    effective_sample_size: float
    max_weight: float
    iterations: int = 0
    warning: str | None = None
    violations: tuple[Violation, ...] = ()
    objective_trace: tuple[float, ...] = field(default=(), repr=False)

    def report(self) -> dict:
        return {
            "status": self.status.value,
            "klDivergence": self.kl_divergence,
            "residualNorm": self.residual_norm,
            "effectiveSampleSize": self.effective_sample_size,
            "maxWeight": self.max_weight,
            "violations": [v.to_json() for v in self.violations],
            "dual": [float(v) for v in self.dual],
            "convergence": {"iterations": self.iterations, "warning": self.warning},
        }


def kl_to_uniform(w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    pos = w > 0
    return float(max(np.sum(w[pos] * np.log(len(w) * w[pos])), 0.0))


def effective_sample_size(w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def _finish(
    z: np.ndarray,
    mu: np.ndarray,
    w: np.ndarray,
    dual: np.ndarray,
    status: Status,
    cfg: SolverConfig,
    **extra,
) -> WeightSolution:
    residual = z.T @ w - mu
    residual_norm = float(np.max(np.abs(residual))) if residual.size else 0.0
    if status is Status.RELAXED and residual_norm <= cfg.residual_tol:
        status = Status.EXACT
    return WeightSolution(
        weights=w,
        dual=np.asarray(dual, dtype=float),
        kl_divergence=kl_to_uniform(w),
        residual=residual,
        residual_norm=residual_norm,
        status=status,
        effective_sample_size=effective_sample_size(w),
        max_weight=float(w.max()),
        **extra,
    )


def _standardize(z: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    center = z.mean(axis=0)
    scale = z.std(axis=0)
    scale[scale == 0] = 1.0
    return (z - center) / scale, (mu - center) / scale, center, scale


def _logsumexp(u: np.ndarray) -> float:
    top = u.max()
    return float(top + math.log(np.exp(u - top).sum()))


class _NewtonResult(NamedTuple):
    nu: np.ndarray
    log_w: np.ndarray
    log_norm: float
    converged: bool
    iterations: int
    grad_norm: float


def _newton_dual(
    zt: np.ndarray,
    mut: np.ndarray,
    offset: np.ndarray | None,
    grad_tol: float,
    max_iter: int,
    ridge: np.ndarray | None = None,
    start: np.ndarray | None = None,
) -> _NewtonResult:
    """Minimize  log sum_i exp(a_i - zt_i . nu) + mut . nu + 1/2 sum_j r_j nu_j^2.

    Without the ridge this is the negated dual (up to constants) of the KL
    projection whose optimal weights are ``softmax(a - zt nu)``.  The ridge
    turns it into the dual of the squared-residual relaxation.
    """
    n, k = zt.shape
    a = np.zeros(n) if offset is None else offset
    r = np.zeros(k) if ridge is None else ridge
    nu = np.zeros(k) if start is None else start.copy()

    def evaluate(nu: np.ndarray) -> tuple[float, np.ndarray, float]:
        u = a - zt @ nu
        lse = _logsumexp(u)
        return lse + float(mut @ nu) + 0.5 * float(r @ (nu * nu)), u - lse, lse

    f, log_w, lse = evaluate(nu)
    grad_norm = math.inf
    for it in range(max_iter + 1):
        p = np.exp(log_w)
        mean = zt.T @ p
        grad = mut - mean + r * nu
        grad_norm = float(np.max(np.abs(grad))) if k else 0.0
        if grad_norm <= grad_tol:
            return _NewtonResult(nu, log_w, lse, True, it, grad_norm)
        if it == max_iter:
            break
        centered = zt - mean
        hess = (centered * p[:, None]).T @ centered + np.diag(r)
        # Levenberg damping: grow the diagonal shift until the system is positive definite
        damping = 1e-12 * max(float(np.trace(hess)) / k, 1.0)
        while True:
            try:
                chol = np.linalg.cholesky(hess + damping * np.eye(k))
                break
            except np.linalg.LinAlgError:
                damping *= 10.0
        step = -np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        elif -0.5 * slope <= 1e-15 * (1.0 + abs(f)):
            # Newton decrement below the rounding level of f: no further progress possible
            return _NewtonResult(nu, log_w, lse, True, it, grad_norm)
        t = 1.0
        while True:
            f_new, log_w_new, lse_new = evaluate(nu + t * step)
            if f_new <= f + _ARMIJO * t * slope:
                break
            t *= 0.5
            if t < _MIN_STEP:
                return _NewtonResult(nu, log_w, lse, False, it, grad_norm)
        nu = nu + t * step
        f, log_w, lse = f_new, log_w_new, lse_new
        if not math.isfinite(f):
            break
    return _NewtonResult(nu, log_w, lse, False, max_iter, grad_norm)


def _original_dual(res: _NewtonResult, center: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # zt . nu = z . (nu / scale) - center . (nu / scale); fold the constant into nu_0
    nu_z = res.nu / scale
    nu_0 = res.log_norm - 1.0 - float(center @ nu_z)
    return np.append(nu_z, nu_0)


def _check_aligned(z: TransformedMatrix, target: MomentTarget) -> tuple[np.ndarray, np.ndarray]:
    if tuple(z.terms) != tuple(target.terms):
        raise DataError("transformed matrix and target are not aligned")
    return z.z, target.values


def solve_exact(z: TransformedMatrix, target: MomentTarget, cfg: SolverConfig = SolverConfig()) -> WeightSolution:
    """Maximum-entropy weights reproducing ``target`` exactly, via the dual.

    Returns status ``Infeasible`` (with the last iterate) when Newton stalls
    or hits its cap with the residual above ``cfg.residual_tol``.
    """
    zz, mu = _check_aligned(z, target)
    n, k = zz.shape
    if n == 1:
        w = np.ones(1)
        resid = np.max(np.abs(zz[0] - mu)) if k else 0.0
        status = Status.EXACT if resid <= cfg.residual_tol else Status.INFEASIBLE
        return _finish(zz, mu, w, np.append(np.zeros(k), -1.0), status, cfg)
    zt, mut, center, scale = _standardize(zz, mu)
    res = _newton_dual(zt, mut, None, cfg.grad_tol, cfg.max_newton_iter)
    w = np.exp(res.log_w)
    w /= w.sum()
    dual = _original_dual(res, center, scale)
    residual_norm = float(np.max(np.abs(zz.T @ w - mu))) if k else 0.0
    if residual_norm <= cfg.residual_tol:
        status, warning = Status.EXACT, None
    else:
        status = Status.INFEASIBLE
        warning = "dual Newton did not converge" if not res.converged else "residual above tolerance"
    return _finish(zz, mu, w, dual, status, cfg, iterations=res.iterations, warning=warning)


def _mirror_step(log_w: np.ndarray, grad: np.ndarray, eta: float, lam: float) -> np.ndarray:
    # closed-form minimizer of <grad, v> + lam*sum v log v + KL(v||w)/eta over the simplex
    u = (log_w - eta * grad) / (1.0 + eta * lam)
    return u - _logsumexp(u)


def _relaxed_dual_start(zz: np.ndarray, mu: np.ndarray, cfg: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Log-weights and dual of the relaxed problem from its ridge-regularized dual.

    With ``theta = 2 r / lam`` the optimum is ``w = softmax(-Z theta)`` where
    theta minimizes  LSE(-Z theta) + theta . mu + lam/4 ||theta||^2.
    """
    zt, mut, center, scale = _standardize(zz, mu)
    # continuation in lam: the dual optimum grows like 1/lam and Newton
    # needs a nearby starting point once lam is small
    path = [cfg.lam]
    while path[-1] < 1.0:
        path.append(path[-1] * 10.0)
    nu = None
    for i, lam in enumerate(reversed(path)):
        tol = cfg.grad_tol if i == len(path) - 1 else max(cfg.grad_tol, 1e-6)
        res = _newton_dual(zt, mut, None, tol, cfg.max_newton_iter, ridge=lam / (2.0 * scale**2), start=nu)
        nu = res.nu
    return res.log_w, _original_dual(res, center, scale)


def solve_relaxed(
    z: TransformedMatrix,
    target: MomentTarget,
    cfg: SolverConfig = SolverConfig(),
    warm_start: bool = True,
) -> WeightSolution:
    """Minimize ||Z^T w - mu||^2 + lam * KL(w || uniform) over the simplex.

    Composite entropic mirror descent: the divergence term is handled in
    closed form inside each step and the step size is chosen by
    backtracking on the quadratic term.  Every accepted step lowers the
    objective; the recorded trace lists it after each accepted step.

    With ``warm_start`` the iteration starts from the solution of the
    (k-dimensional, smooth) dual of the same problem instead of from uniform
    weights; for small ``lam`` a cold start needs far more iterations than
    the cap allows.
    """
    if cfg.lam <= 0:
        raise ValueError("relaxed solver needs lambda > 0")
    zz, mu = _check_aligned(z, target)
    n, k = zz.shape
    lam = cfg.lam
    log_n = math.log(n)
    dual = np.full(k + 1, np.nan)

    def objective(log_w: np.ndarray) -> tuple[float, float, np.ndarray]:
        w = np.exp(log_w)
        r = zz.T @ w - mu
        quad = float(r @ r)
        pos = w > 0
        kl = float(np.sum(w[pos] * (log_w[pos] + log_n)))
        return quad + lam * kl, quad, r

    log_w = np.full(n, -log_n)
    if warm_start and n > 1:
        start, start_dual = _relaxed_dual_start(zz, mu, cfg)
        if objective(start)[0] <= objective(log_w)[0]:
            log_w, dual = start, start_dual
    f, quad, r = objective(log_w)
    trace = [f]
    row_sq = np.einsum("ij,ij->i", zz, zz) if k else np.zeros(n)
    lipschitz = 2.0 * max(float(row_sq.max()), 1e-12)
    eta = cfg.mirror_step if cfg.mirror_step_rule == "fixed" else 1.0 / lipschitz
    converged = False
    it = 0
    for it in range(1, cfg.max_mirror_iter + 1):
        grad = 2.0 * (zz @ r)
        while True:
            cand = _mirror_step(log_w, grad, eta, lam)
            f_new, quad_new, r_new = objective(cand)
            w_new, w_old = np.exp(cand), np.exp(log_w)
            pos = w_new > 0
            bregman = float(np.sum(w_new[pos] * (cand[pos] - log_w[pos])))
            majorized = quad_new <= quad + float(grad @ (w_new - w_old)) + bregman / eta + 1e-15
            if f_new <= f and (majorized or cfg.mirror_step_rule == "fixed"):
                break
            if cfg.mirror_step_rule == "fixed":
                # a fixed step that fails to descend is rejected and the run ends
                cand = None
                break
            eta *= 0.5
            if eta < 1e-300:
                cand = None
                break
        if cand is None:
            converged = True
            break
        decrease = f - f_new
        log_w, f, quad, r = cand, f_new, quad_new, r_new
        trace.append(f)
        if decrease < 1e-12:
            converged = True
            break
        if cfg.mirror_step_rule == "backtracking":
            eta *= 2.0
    w = np.exp(log_w)
    w /= w.sum()
    warning = None if converged else f"mirror descent stopped at iteration cap ({cfg.max_mirror_iter})"
    return _finish(
        zz, mu, w, dual, Status.RELAXED, cfg,
        iterations=it, warning=warning, objective_trace=tuple(trace),
    )


def feasibility_check(z: TransformedMatrix, target: MomentTarget) -> list[Violation]:
    """Terms whose target falls outside the internal column range.

    An empty list is necessary for feasibility, not sufficient.
    """
    zz, mu = _check_aligned(z, target)
    lo, hi = zz.min(axis=0), zz.max(axis=0)
    return [
        Violation(j, z.terms[j].label, float(lo[j]), float(hi[j]), float(mu[j]))
        for j in range(zz.shape[1])
        if mu[j] < lo[j] or mu[j] > hi[j]
    ]


def clamp_weights(w: np.ndarray, min_weight: float) -> np.ndarray:
    if min_weight <= 0 or w.min() >= min_weight:
        return w
    w = np.maximum(w, min_weight)
    return w / w.sum()


def solve(z: TransformedMatrix, target: MomentTarget, cfg: SolverConfig = SolverConfig()) -> WeightSolution:
    """Exact balancing when possible, relaxed otherwise, then weight clamping.

    Range violations skip the exact attempt.  After clamping to
    ``cfg.min_weight`` all diagnostics are recomputed and the status is
    re-derived from the clamped residual.
    """
    zz, mu = _check_aligned(z, target)
    violations = tuple(feasibility_check(z, target))
    sol = None
    if not violations:
        sol = solve_exact(z, target, cfg)
        if sol.status is not Status.EXACT:
            logger.info("exact balancing failed (%s); falling back to relaxed problem", sol.warning)
            sol = None
    if sol is None:
        sol = solve_relaxed(z, target, cfg)
    w = clamp_weights(sol.weights, cfg.min_weight)
    status = sol.status
    residual_norm = float(np.max(np.abs(zz.T @ w - mu))) if zz.shape[1] else 0.0
    if status is Status.EXACT and residual_norm > cfg.residual_tol:
        status = Status.RELAXED
    return _finish(
        zz, mu, w, sol.dual, status, cfg,
        iterations=sol.iterations, warning=sol.warning, violations=violations,
        objective_trace=sol.objective_trace,
    )


class Balanced(NamedTuple):
    solution: WeightSolution
    pruned: PruneResult


def balance(sample: Sample, target: MomentTarget, cfg: SolverConfig = SolverConfig()) -> Balanced:
    """Transform, prune near-constant columns, and solve for weights.

    A pruned column whose target lies outside its (degenerate) internal range
    cannot be matched by any weights; it is reported as a violation and the
    status is at best Relaxed.
    """
    z = apply_transforms(sample, TransformSpec(target.terms))
    pruned = prune_low_variance_columns(z, target, cfg.sd_cutoff)
    sol = solve(pruned.z, pruned.target, cfg)
    # report violations against the original term positions
    kept = pruned.kept
    found = tuple(replace(v, term_index=int(kept[v.term_index])) for v in sol.violations)
    lost = tuple(v for v in feasibility_check(z, target) if z.terms[v.term_index] in pruned.pruned)
    if lost:
        note = f"pruned term(s) {', '.join(v.term for v in lost)} cannot reach their targets"
        sol = replace(
            sol,
            status=Status.INFEASIBLE if sol.status is Status.INFEASIBLE else Status.RELAXED,
            warning=f"{sol.warning}; {note}" if sol.warning else note,
        )
    sol = replace(sol, violations=tuple(sorted(found + lost, key=lambda v: v.term_index)))
    return Balanced(sol, pruned)


class WorstCase(NamedTuple):
    bound: float
    solution: WeightSolution
    objective: float


def worst_case_bound(
    z: TransformedMatrix,
    target: MomentTarget,
    losses: np.ndarray,
    lam: float,
    cfg: SolverConfig = SolverConfig(),
) -> WorstCase:
    """Largest divergence-regularized expected loss among weights matching ``target``.

    Solves  max_w  sum_i w_i l_i - lam * KL(w || uniform)  over the exact
    feasible set.  The optimum is ``w_i ∝ exp((l_i - z_i . nu) / lam)``,
    found with the same dual Newton iteration as :func:`solve_exact` after
    offsetting each row by ``l_i / lam``.

    ``bound`` is the expected loss under those weights; ``objective`` also
    subtracts the divergence penalty.  The stored dual satisfies
    ``w_i = exp(l_i / lam - 1 - (z_i, 1) . nu)``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    zz, mu = _check_aligned(z, target)
    losses = np.asarray(losses, dtype=float)
    n, k = zz.shape
    if losses.shape != (n,):
        raise ValueError(f"losses has shape {losses.shape}, expected ({n},)")
    if (losses < 0).any():
        raise ValueError("losses must be nonnegative")
    if feasibility_check(z, target):
        raise InfeasibleTargetError("target is outside the internal range; use relaxed estimation instead")
    zt, mut, center, scale = _standardize(zz, mu)
    res = _newton_dual(zt, mut, losses / lam, cfg.grad_tol, cfg.max_newton_iter)
    w = np.exp(res.log_w)
    w /= w.sum()
    residual_norm = float(np.max(np.abs(zz.T @ w - mu))) if k else 0.0
    if residual_norm > cfg.residual_tol:
        raise InfeasibleTargetError(
            f"no weights reproduce the target (residual {residual_norm:.3g}); use relaxed estimation instead"
        )
    sol = _finish(zz, mu, w, _original_dual(res, center, scale), Status.EXACT, cfg, iterations=res.iterations)
    bound = float(w @ losses)
    return WorstCase(bound, sol, bound - lam * sol.kl_divergence)


__all__ = [
    "Balanced",
    "InfeasibleTargetError",
    "SolverConfig",
    "Status",
    "Term",
    "Violation",
    "WeightSolution",
    "WorstCase",
    "balance",
    "clamp_weights",
    "effective_sample_size",
    "feasibility_check",
    "kl_to_uniform",
    "solve",
    "solve_exact",
    "solve_relaxed",
    "worst_case_bound",
]
