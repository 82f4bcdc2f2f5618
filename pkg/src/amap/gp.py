"""Gaussian-process regression over a fixed 3-D query grid.

Supports plain conditioning on deterministic inputs and the expected-kernel
mode where each training input carries a position covariance (see
``amap.quadrature``). Hyperparameters are trained by multi-start simplex
minimization of the negative log marginal likelihood.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from .kernels import Hyperparams, KernelSpec, kernel_matrix
from .quadrature import GaussHermiteRule, UncertainPoint, expected_gram

__all__ = [
    "DegenerateGramError",
    "IllConditionedError",
    "ObservedInput",
    "TrainingSet",
    "QueryGrid",
    "Posterior",
    "prior_mean",
    "gp_predict",
    "negative_log_marginal_likelihood",
    "train_hyperparams",
]

# escalating diagonal regularization of the Gram matrix, relative to sigma_f^2
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

_LOG_BOUND = 3.0  # hyperparameter search domain: [1e-3, 1e3] per parameter


class DegenerateGramError(np.linalg.LinAlgError):
    pass


class IllConditionedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObservedInput:
    """A training location with Gaussian position uncertainty."""

    mean: np.ndarray  # (3,)
    covariance: np.ndarray  # (3, 3)


class TrainingSet:
    """Immutable set of observed inputs and scalar field targets."""

    def __init__(self, inputs, targets):
        inputs = list(inputs)
        targets = np.asarray(targets, float).reshape(-1)
        if len(inputs) != targets.size:
            raise ValueError("inputs and targets length mismatch")
        self.means = np.array([np.asarray(i.mean, float) for i in inputs]).reshape(
            -1, 3
        )
        self.covariances = np.array(
            [0.5 * (np.asarray(i.covariance, float) + np.asarray(i.covariance, float).T) for i in inputs]
        ).reshape(-1, 3, 3)
        self.targets = targets
        self.means.setflags(write=False)
        self.covariances.setflags(write=False)
        self.targets.setflags(write=False)
        self._fingerprint = None

    @classmethod
    def empty(cls) -> "TrainingSet":
        return cls([], [])

    def __len__(self) -> int:
        return self.targets.size

    def extended(self, inp: ObservedInput, target: float) -> "TrainingSet":
        inputs = [
            ObservedInput(m, c) for m, c in zip(self.means, self.covariances)
        ]
        inputs.append(inp)
        return TrainingSet(inputs, np.append(self.targets, target))

    def uncertain_points(self):
        for m, c in zip(self.means, self.covariances):
            yield UncertainPoint.from_moments(m, c)

    def fingerprint(self) -> bytes:
        if self._fingerprint is None:
            h = hashlib.sha1()
            h.update(self.means.tobytes())
            h.update(self.covariances.tobytes())
            h.update(self.targets.tobytes())
            self._fingerprint = h.digest()
        return self._fingerprint


class QueryGrid:
    """Fixed lattice of query points.

    Points enumerate the lattice in C order over (ix, iy, iz): the z index
    varies fastest, the x index slowest.
    """

    def __init__(self, origin, extent, resolution, points, shape):
        self.origin = np.asarray(origin, float).reshape(3)
        self.extent = np.asarray(extent, float).reshape(3)
        self.resolution = np.asarray(resolution, float).reshape(3)
        self.points = np.asarray(points, float).reshape(-1, 3)
        self.shape = tuple(shape)
        self.points.setflags(write=False)
        self._fingerprint = None

    @classmethod
    def regular(cls, origin, extent, resolution) -> "QueryGrid":
        origin = np.asarray(origin, float).reshape(3)
        extent = np.asarray(extent, float).reshape(3)
        resolution = np.asarray(resolution, float).reshape(3)
        if np.any(resolution <= 0):
            raise ValueError("grid resolution must be positive")
        counts = np.floor(extent / resolution + 1e-9).astype(int) + 1
        axes = [origin[d] + resolution[d] * np.arange(counts[d]) for d in range(3)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
        return cls(origin, extent, resolution, pts, counts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def fingerprint(self) -> bytes:
        if self._fingerprint is None:
            self._fingerprint = hashlib.sha1(self.points.tobytes()).digest()
        return self._fingerprint


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray  # (P,)
    covariance: np.ndarray  # (P, P)

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


def prior_mean(grid: QueryGrid, value: float) -> np.ndarray:
    """Constant prior mean vector over the grid."""
    return np.full(len(grid), float(value))


def chol_with_jitter(a: np.ndarray, sf2: float):
    """Cholesky of a symmetric matrix with an escalating diagonal jitter.

    Returns (factor, jitter_used). Raises DegenerateGramError when even the
    maximum jitter does not make the matrix factorizable.
    """
    n = a.shape[0]
    eye = np.eye(n)
    jitter = 0.0
    while True:
        try:
            return cho_factor(a + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = _JITTER_START * sf2
            else:
                jitter *= 10.0
            if jitter > _JITTER_MAX * sf2 * (1 + 1e-12):
                raise DegenerateGramError(
                    "Gram matrix not factorizable even after maximum jitter"
                ) from None


def gp_predict(
    train: TrainingSet,
    grid: QueryGrid,
    spec: KernelSpec,
    kernel_mode: str = "plain",
    rule: GaussHermiteRule | None = None,
    prior: float = 0.0,
) -> Posterior:
    """Posterior over the grid by conditioning on the training set.

    ``kernel_mode`` is "plain" (input covariances ignored) or "expected"
    (Gram blocks averaged over the input uncertainty; requires ``rule``).
    """
    hp = spec.hyperparams
    k_ss = kernel_matrix(spec, grid.points, grid.points)
    m_star = prior_mean(grid, prior)
    if len(train) == 0:
        return Posterior(mean=m_star, covariance=0.5 * (k_ss + k_ss.T))

    if kernel_mode == "plain":
        k_xx = kernel_matrix(spec, train.means, train.means)
        k_sx = kernel_matrix(spec, grid.points, train.means)
    elif kernel_mode == "expected":
        if rule is None:
            raise ValueError("expected kernel mode requires a quadrature rule")
        k_xx, k_sx = expected_gram(spec, train, grid, rule)
    else:
        raise ValueError(f"unknown kernel mode {kernel_mode!r}")

    gram = k_xx + hp.noise_variance * np.eye(len(train))
    factor, _ = chol_with_jitter(gram, hp.signal_variance)
    alpha = cho_solve(factor, train.targets - prior)
    mean = m_star + k_sx @ alpha
    cov = k_ss - k_sx @ cho_solve(factor, k_sx.T)
    cov = 0.5 * (cov + cov.T)
    return Posterior(mean=mean, covariance=cov)


def negative_log_marginal_likelihood(
    train: TrainingSet, spec: KernelSpec
) -> float:
    """NLML of the training targets, inputs treated as deterministic means.

    Targets are centered on their empirical mean before evaluation.
    """
    hp = spec.hyperparams
    n = len(train)
    y = train.targets - np.mean(train.targets)
    k = kernel_matrix(spec, train.means, train.means)
    gram = k + hp.noise_variance * np.eye(n)
    factor, _ = chol_with_jitter(gram, hp.signal_variance)
    alpha = cho_solve(factor, y)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(0.5 * y @ alpha + 0.5 * logdet + 0.5 * n * np.log(2.0 * np.pi))


def _clip_log_params(logp: np.ndarray) -> np.ndarray:
    return np.clip(logp, -_LOG_BOUND, _LOG_BOUND)


def train_hyperparams(
    samples: TrainingSet,
    spec: KernelSpec,
    restarts: int = 10,
    seed: int = 0,
    fix_noise: float | None = None,
) -> Hyperparams:
    """Multi-start Nelder-Mead over log10 hyperparameters in [1e-3, 1e3].

    ``fix_noise`` pins the noise variance instead of optimizing it.
    """
    if len(samples) < 5:
        raise ValueError("need at least 5 samples to train hyperparameters")

    def build(logp: np.ndarray) -> Hyperparams:
        logp = _clip_log_params(logp)
        if fix_noise is None:
            sf2, ls, sn2 = 10.0 ** logp
        else:
            sf2, ls = 10.0 ** logp
            sn2 = fix_noise
        return Hyperparams(sf2, ls, sn2)

    def objective(logp: np.ndarray) -> float:
        try:
            return negative_log_marginal_likelihood(
                samples, spec.with_hyperparams(build(logp))
            )
        except (DegenerateGramError, FloatingPointError, ValueError):
            return 1e30

    hp0 = spec.hyperparams
    if fix_noise is None:
        start0 = np.log10(
            [hp0.signal_variance, hp0.length_scale, hp0.noise_variance]
        )
    else:
        start0 = np.log10([hp0.signal_variance, hp0.length_scale])
    rng = np.random.default_rng(seed)
    starts = [start0] + [
        rng.uniform(-_LOG_BOUND, _LOG_BOUND, size=start0.size)
        for _ in range(max(0, restarts - 1))
    ]

    best_val = np.inf
    best_logp = None
    for s in starts:
        res = minimize(
            objective,
            s,
            method="Nelder-Mead",
            options={"maxiter": 400, "xatol": 1e-4, "fatol": 1e-8},
        )
        val = min(res.fun, objective(s))
        cand = res.x if res.fun <= val else s
        if val < best_val:
            best_val = val
            best_logp = cand
    if best_logp is None or best_val >= 1e30:
        raise IllConditionedError(
            "likelihood not evaluable anywhere on the search domain"
        )
    return build(best_logp)
