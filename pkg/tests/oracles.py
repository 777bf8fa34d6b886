"""Independent reference implementations used to check the package.

None of these share code with ``extval``: they work on the primal problems
directly, with generic optimizers or exhaustive search.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog


def kl_uniform(w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    pos = w > 0
    return float(np.sum(w[pos] * np.log(len(w) * w[pos])))


def primal_entropy_balance(z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Minimum-KL simplex weights with Z^T w = mu, solved in the primal.

    An LP supplies a strictly interior feasible point; damped Newton then
    minimizes the divergence over the affine face ``w0 + N t`` while keeping
    every weight positive.
    """
    n = z.shape[0]
    w, basis = _interior_point(z, mu), feasible_face(z, mu)[1]

    def f(w):
        return float(np.sum(w * np.log(n * w)))

    for _ in range(200):
        grad = basis.T @ (np.log(n * w) + 1.0)
        hess = basis.T @ (basis / w[:, None])
        dt = -np.linalg.solve(hess, grad)
        slope = float(grad @ dt)
        if -slope < 1e-26:
            break
        step = basis @ dt
        neg = step < 0
        t = min(1.0, 0.99 * float(np.min(w[neg] / -step[neg]))) if neg.any() else 1.0
        while f(w + t * step) > f(w) + 1e-4 * t * slope and t > 1e-16:
            t *= 0.5
        w = w + t * step
    return w


def _interior_point(z: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Feasible weights maximizing the smallest weight (an LP)."""
    n = z.shape[0]
    a_eq = np.hstack([np.vstack([z.T, np.ones((1, n))]), np.zeros((z.shape[1] + 1, 1))])
    b_eq = np.append(mu, 1.0)
    # variables (w, s): maximize s subject to w_i >= s
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq,
                  bounds=[(0, None)] * n + [(None, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        raise ValueError("target has no strictly positive feasible weights")
    return res.x[:n]


def feasible_face(z: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """A particular solution and a null-space basis of {Z^T w = mu, 1^T w = 1}."""
    n = z.shape[0]
    a_eq = np.vstack([z.T, np.ones((1, n))])
    b_eq = np.append(mu, 1.0)
    w0 = np.linalg.lstsq(a_eq, b_eq, rcond=None)[0]
    return w0, null_space(a_eq)


def grid_max(z: np.ndarray, mu: np.ndarray, objective, steps: int = 2001, radius: float = 1.5) -> float:
    """Maximize ``objective(w)`` over the feasible weights by an exhaustive grid.

    Feasible weights are parametrized as ``w0 + N t``; ``t`` ranges over a
    cube with a coarse pass followed by a refined pass around the best cell.
    """
    w0, basis = feasible_face(z, mu)
    d = basis.shape[1]
    if d == 0:
        return objective(w0)
    best_t, best = None, -np.inf
    center, half = np.zeros(d), radius
    per_axis = steps if d == 1 else int(round(steps ** (1.0 / d)))
    for _ in range(4):
        axes = [np.linspace(c - half, c + half, per_axis) for c in center]
        for t in itertools.product(*axes):
            w = w0 + basis @ np.array(t)
            if (w < 0).any():
                continue
            val = objective(w)
            if val > best:
                best, best_t = val, np.array(t)
        center, half = best_t, 4.0 * half / (per_axis - 1)
    return best


def auc_pairs(scores, outcomes, weights) -> float:
    """Weighted AUC from the definition, one pair at a time."""
    num = den = 0.0
    for si, yi, wi in zip(scores, outcomes, weights):
        if yi != 1:
            continue
        for sj, yj, wj in zip(scores, outcomes, weights):
            if yj != 0:
                continue
            den += wi * wj
            num += wi * wj * (1.0 if si > sj else 0.5 if si == sj else 0.0)
    return num / den


def unweighted_auc(scores, outcomes) -> float:
    """Rank-sum (Mann-Whitney U) statistic with midranks."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes)
    ranks = rankdata(scores)
    n1 = int((outcomes == 1).sum())
    n0 = len(outcomes) - n1
    return float((ranks[outcomes == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g
