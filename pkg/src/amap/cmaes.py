"""Covariance Matrix Adaptation Evolution Strategy ((mu/mu_w, lambda)).

Standard rank-1 plus rank-mu update with cumulative step-size adaptation,
following Hansen's reference parameterization. Deterministic given the seed.
Box constraints are handled with a quadratic penalty added to the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CmaesResult", "cmaes_minimize"]


@dataclass
class CmaesResult:
    x: np.ndarray
    fun: float
    evaluations: int


def cmaes_minimize(
    f,
    x0,
    sigma0: float,
    max_evals: int = 10_000,
    seed: int = 0,
    popsize: int | None = None,
    lower=None,
    upper=None,
    penalty_weight: float = 0.0,
    ftol: float | None = None,
) -> CmaesResult:
    """Minimize ``f`` over R^n starting from ``x0`` with initial step ``sigma0``.

    When bounds and a positive ``penalty_weight`` are given, the sampled
    objective is f(x) + w * ||x - clip(x, lower, upper)||^2; the best-seen
    solution is reported clipped into the box. The initial point is always
    evaluated, so the result is never worse than f(x0).
    """
    x0 = np.asarray(x0, float).ravel()
    n = x0.size
    rng = np.random.default_rng(seed)
    lam = popsize or (4 + int(3 * np.log(n)))
    lam = max(lam, 2)
    mu = lam // 2
    weights = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    weights /= weights.sum()
    mueff = 1.0 / np.sum(weights**2)

    cc = (4 + mueff / n) / (n + 4 + 2 * mueff / n)
    cs = (mueff + 2) / (n + mueff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((n + 2) ** 2 + mueff))
    damps = 1 + 2 * max(0.0, np.sqrt((mueff - 1) / (n + 1)) - 1) + cs
    chin = np.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n**2))

    have_box = lower is not None and upper is not None and penalty_weight > 0
    if have_box:
        lower = np.asarray(lower, float).ravel()
        upper = np.asarray(upper, float).ravel()

    def evaluate(x):
        if have_box:
            clipped = np.clip(x, lower, upper)
            excess = x - clipped
            return f(x) + penalty_weight * float(excess @ excess)
        return f(x)

    def report(x):
        return np.clip(x, lower, upper) if have_box else x

    mean = x0.copy()
    sigma = float(sigma0)
    pc = np.zeros(n)
    ps = np.zeros(n)
    cov = np.eye(n)
    b_mat = np.eye(n)
    d_vec = np.ones(n)
    inv_sqrt = np.eye(n)
    eigen_stale = 0
    eigen_interval = max(1, int(lam / (c1 + cmu) / n / 10))

    f_best = float(evaluate(x0))
    x_best = report(x0).copy()
    evals = 1

    while evals + lam <= max_evals:
        z = rng.standard_normal((lam, n))
        y = z * d_vec @ b_mat.T
        xs = mean[None, :] + sigma * y
        fs = np.array([evaluate(x) for x in xs])
        evals += lam

        order = np.argsort(fs, kind="stable")
        if fs[order[0]] < f_best:
            f_best = float(fs[order[0]])
            x_best = report(xs[order[0]]).copy()

        y_sel = y[order[:mu]]
        y_w = weights @ y_sel
        mean = mean + sigma * y_w

        ps = (1 - cs) * ps + np.sqrt(cs * (2 - cs) * mueff) * (inv_sqrt @ y_w)
        hsig = float(
            np.linalg.norm(ps) / np.sqrt(1 - (1 - cs) ** (2 * evals / lam)) / chin
            < 1.4 + 2 / (n + 1)
        )
        pc = (1 - cc) * pc + hsig * np.sqrt(cc * (2 - cc) * mueff) * y_w

        rank_mu = (y_sel * weights[:, None]).T @ y_sel
        cov = (
            (1 - c1 - cmu) * cov
            + c1 * (np.outer(pc, pc) + (1 - hsig) * cc * (2 - cc) * cov)
            + cmu * rank_mu
        )
        sigma *= float(np.exp((cs / damps) * (np.linalg.norm(ps) / chin - 1)))
        sigma = min(sigma, 1e8)

        eigen_stale += 1
        if eigen_stale >= eigen_interval:
            eigen_stale = 0
            cov = 0.5 * (cov + cov.T)
            d2, b_mat = np.linalg.eigh(cov)
            d_vec = np.sqrt(np.maximum(d2, 1e-30))
            inv_sqrt = b_mat @ np.diag(1.0 / d_vec) @ b_mat.T

        if ftol is not None and np.max(fs) - np.min(fs) < ftol:
            break
        if not np.all(np.isfinite(mean)) or not np.isfinite(sigma):
            break

    return CmaesResult(x=x_best, fun=f_best, evaluations=evals)
