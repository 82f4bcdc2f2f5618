"""Expected-kernel evaluation under Gaussian input uncertainty.

The covariance function is averaged over an uncertain input position
x ~ N(p, Sigma) using 3-D tensor-product Gauss-Hermite quadrature. With the
change of variables x = p + sqrt(2) L u (L the Cholesky factor of Sigma) the
Gaussian expectation becomes a weighted sum over the Hermite nodes with
weights w / sqrt(pi) per dimension, so the weights are normalized and a
collapsing covariance recovers the plain kernel exactly.

Gram blocks between two uncertain inputs use nested quadrature over both
input distributions; the diagonal of a stationary kernel is sigma_f^2
regardless of the input distribution and is short-circuited.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .kernels import KernelSpec

__all__ = [
    "UnsupportedOrderError",
    "GaussHermiteRule",
    "UncertainPoint",
    "gauss_hermite_rule",
    "expected_kernel",
    "expected_kernel_vector",
    "expected_kernel_pair",
    "expected_gram",
    "quadrature_points",
]

_MAX_ORDER = 20
_CHOL_REG = 1e-12


class UnsupportedOrderError(ValueError):
    pass


@dataclass(frozen=True)
class GaussHermiteRule:
    """Physicists' Gauss-Hermite rule (weight exp(-u^2)) of a given order."""

    order: int
    nodes: np.ndarray  # (M,)
    weights: np.ndarray  # (M,) raw weights, sum = sqrt(pi)

    @property
    def normalized_weights(self) -> np.ndarray:
        """1-D weights of the Gaussian expectation; they sum to 1."""
        return self.weights / np.sqrt(np.pi)


def gauss_hermite_rule(order: int) -> GaussHermiteRule:
    if not (1 <= order <= _MAX_ORDER):
        raise UnsupportedOrderError(
            f"order must be in [1, {_MAX_ORDER}], got {order}"
        )
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussHermiteRule(order=order, nodes=nodes, weights=weights)


def _tensor_nodes(rule: GaussHermiteRule) -> tuple[np.ndarray, np.ndarray]:
    """3-D tensor product: nodes (M^3, 3) and normalized weights (M^3,)."""
    u = rule.nodes
    w = rule.normalized_weights
    u1, u2, u3 = np.meshgrid(u, u, u, indexing="ij")
    nodes3 = np.stack([u1.ravel(), u2.ravel(), u3.ravel()], axis=1)
    w3 = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return nodes3, w3


@dataclass(frozen=True)
class UncertainPoint:
    """Gaussian position belief with a cached Cholesky factor."""

    mean: np.ndarray  # (3,)
    covariance: np.ndarray  # (3, 3)
    cholesky: np.ndarray = field(repr=False, default=None)  # lower triangular

    @classmethod
    def from_moments(cls, mean, covariance) -> "UncertainPoint":
        mean = np.asarray(mean, float).reshape(3)
        cov = np.asarray(covariance, float).reshape(3, 3)
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            # rank-deficient belief (e.g. a perfectly known axis)
            chol = np.linalg.cholesky(cov + _CHOL_REG * np.eye(3))
        return cls(mean=mean, covariance=cov, cholesky=chol)


def quadrature_points(
    point: UncertainPoint, rule: GaussHermiteRule
) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation points x = p + sqrt(2) L u and their normalized weights."""
    nodes3, w3 = _tensor_nodes(rule)
    pts = point.mean[None, :] + np.sqrt(2.0) * nodes3 @ point.cholesky.T
    return pts, w3


def expected_kernel(
    spec: KernelSpec,
    a: UncertainPoint,
    b_query: np.ndarray,
    rule: GaussHermiteRule,
) -> float:
    """E[k(x, b_query)] with x ~ N(a.mean, a.covariance)."""
    b = np.asarray(b_query, float).reshape(1, 3)
    return float(expected_kernel_vector(spec, a, b, rule)[0])


def expected_kernel_vector(
    spec: KernelSpec,
    a: UncertainPoint,
    b_queries: np.ndarray,
    rule: GaussHermiteRule,
) -> np.ndarray:
    """Vectorized expected kernel against many deterministic queries."""
    pts, w3 = quadrature_points(a, rule)
    hp = spec.hyperparams
    out = _backend.cross_gram(
        _backend.family_code(spec.family),
        hp.signal_variance,
        hp.length_scale,
        pts[None, :, :],
        w3,
        np.atleast_2d(np.asarray(b_queries, float)),
    )
    return out[0]


def expected_kernel_pair(
    spec: KernelSpec,
    a: UncertainPoint,
    b: UncertainPoint,
    rule: GaussHermiteRule,
) -> float:
    """Nested quadrature E[k] over both input distributions.

    The same object on both sides is the Gram diagonal of a stationary
    kernel: exactly sigma_f^2 under any input distribution.
    """
    if a is b:
        return float(spec.hyperparams.signal_variance)
    pa, wa = quadrature_points(a, rule)
    pb, wb = quadrature_points(b, rule)
    hp = spec.hyperparams
    out = _backend.pair_cross(
        _backend.family_code(spec.family),
        hp.signal_variance,
        hp.length_scale,
        pa[None, :, :],
        wa,
        pb[None, :, :],
        wb,
    )
    return float(out[0, 0])


class _GramCache:
    """Keeps the most recent expected-Gram results keyed by content."""

    def __init__(self, maxsize: int = 8):
        self.maxsize = maxsize
        self._store: dict = {}
        self._order: list = []

    def get(self, key):
        return self._store.get(key)

    def put(self, key, value):
        if key in self._store:
            return
        self._store[key] = value
        self._order.append(key)
        while len(self._order) > self.maxsize:
            old = self._order.pop(0)
            self._store.pop(old, None)


_gram_cache = _GramCache()


def expected_gram(
    spec: KernelSpec,
    train,
    grid,
    rule: GaussHermiteRule,
) -> tuple[np.ndarray, np.ndarray]:
    """Expected-kernel Gram blocks (K_xx train-train, K_sx grid-train).

    Results are cached per (training-set contents, kernel, rule order).
    """
    key = (train.fingerprint(), spec, rule.order, grid.fingerprint())
    hit = _gram_cache.get(key)
    if hit is not None:
        return hit

    n = len(train)
    hp = spec.hyperparams
    fam = _backend.family_code(spec.family)
    if n == 0:
        empty = (np.zeros((0, 0)), np.zeros((grid.points.shape[0], 0)))
        _gram_cache.put(key, empty)
        return empty

    clouds = np.empty((n, rule.order**3, 3))
    weights = None
    for i, inp in enumerate(train.uncertain_points()):
        pts, w3 = quadrature_points(inp, rule)
        clouds[i] = pts
        weights = w3

    k_xx = _backend.pair_cross(
        fam, hp.signal_variance, hp.length_scale, clouds, weights, clouds, weights
    )
    k_xx = 0.5 * (k_xx + k_xx.T)
    np.fill_diagonal(k_xx, hp.signal_variance)
    k_sx = _backend.cross_gram(
        fam, hp.signal_variance, hp.length_scale, clouds, weights, grid.points
    ).T
    result = (k_xx, k_sx)
    _gram_cache.put(key, result)
    return result
