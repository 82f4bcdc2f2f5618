"""Stationary isotropic covariance kernels (squared-exponential and Matérn).

All kernels satisfy k(x, x) = signal_variance and decay with the Euclidean
distance between inputs, so they can be evaluated through a distance matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "KernelFamily",
    "Hyperparams",
    "KernelSpec",
    "kernel_eval",
    "kernel_from_distance",
    "kernel_matrix",
]


class KernelFamily(str, Enum):
    SQUARED_EXPONENTIAL = "squared_exponential"
    MATERN32 = "matern32"
    MATERN52 = "matern52"


@dataclass(frozen=True)
class Hyperparams:
    """Kernel amplitude, length scale, and observation noise variance."""

    signal_variance: float
    length_scale: float
    noise_variance: float

    def __post_init__(self):
        for name in ("signal_variance", "length_scale", "noise_variance"):
            value = getattr(self, name)
            if not (value > 0.0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class KernelSpec:
    family: KernelFamily
    hyperparams: Hyperparams

    def with_hyperparams(self, hp: Hyperparams) -> "KernelSpec":
        return KernelSpec(self.family, hp)


def kernel_from_distance(spec: KernelSpec, r: np.ndarray) -> np.ndarray:
    """Evaluate the kernel as a function of Euclidean distance ``r`` (>= 0)."""
    hp = spec.hyperparams
    sf2 = hp.signal_variance
    s = np.asarray(r, dtype=float) / hp.length_scale
    if spec.family is KernelFamily.SQUARED_EXPONENTIAL:
        return sf2 * np.exp(-0.5 * s * s)
    if spec.family is KernelFamily.MATERN32:
        a = np.sqrt(3.0) * s
        return sf2 * (1.0 + a) * np.exp(-a)
    if spec.family is KernelFamily.MATERN52:
        a = np.sqrt(5.0) * s
        return sf2 * (1.0 + a + a * a / 3.0) * np.exp(-a)
    raise ValueError(f"unknown kernel family {spec.family!r}")


def kernel_eval(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> float:
    """Scalar kernel evaluation k(x, x')."""
    r = float(np.linalg.norm(np.asarray(x, float) - np.asarray(x2, float)))
    return float(kernel_from_distance(spec, r))


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dense kernel matrix between point sets ``a`` (n, d) and ``b`` (m, d)."""
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return kernel_from_distance(spec, np.sqrt(d2))
