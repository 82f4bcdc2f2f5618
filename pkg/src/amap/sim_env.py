"""Synthetic world: ground-truth field, point sensor, landmarks, metrics.

The ground truth is a Gaussian random field drawn from the mapping kernel
over the query grid via dense covariance factorization. The point sensor
reads the field by trilinear interpolation at the TRUE robot position while
the mapper records the sample at the ESTIMATED position; that gap is the
mechanism by which localization error corrupts the map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import Posterior, QueryGrid
from .kernels import KernelSpec, kernel_matrix
from .pose_graph import Landmark, PoseBelief

__all__ = [
    "FactorizationFailureError",
    "GroundTruthField",
    "WorldConfig",
    "generate_grf",
    "sample_field",
    "place_landmarks",
    "compute_metrics",
]

_GRF_JITTER = 1e-10
_MAX_GRF_POINTS = 5000


class FactorizationFailureError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GroundTruthField:
    grid: QueryGrid
    values: np.ndarray  # (P,)
    seed: int

    def as_volume(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True)
class WorldConfig:
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    extent: np.ndarray = field(default_factory=lambda: np.array([5.0, 5.0, 4.0]))
    grid_resolution: np.ndarray = field(
        default_factory=lambda: np.array([0.25, 0.25, 1.0])
    )
    landmark_count: int = 10
    sensor_rate_hz: float = 0.25
    start: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 1.0]))
    budget_s: float = 150.0

    def __post_init__(self):
        for name in ("origin", "extent", "grid_resolution", "start"):
            object.__setattr__(
                self, name, np.asarray(getattr(self, name), float).reshape(3)
            )
        lo, hi = self.origin, self.origin + self.extent
        if np.any(self.start < lo) or np.any(self.start > hi):
            raise ValueError("start position outside the workspace")

    def make_grid(self) -> QueryGrid:
        return QueryGrid.regular(self.origin, self.extent, self.grid_resolution)


def generate_grf(grid: QueryGrid, spec: KernelSpec, seed: int) -> GroundTruthField:
    """Draw a zero-mean field from N(0, K(grid, grid) + jitter I)."""
    n = len(grid)
    if n > _MAX_GRF_POINTS:
        raise ValueError(f"grid too large for dense factorization ({n} points)")
    k = kernel_matrix(spec, grid.points, grid.points)
    try:
        chol = np.linalg.cholesky(k + _GRF_JITTER * np.eye(n))
    except np.linalg.LinAlgError as exc:
        raise FactorizationFailureError("covariance factorization failed") from exc
    rng = np.random.default_rng(seed)
    values = chol @ rng.standard_normal(n)
    values.setflags(write=False)
    return GroundTruthField(grid=grid, values=values, seed=seed)


def sample_field(fld: GroundTruthField, position) -> float:
    """Trilinear interpolation of the grid values at a position.

    Positions outside the extent are clamped to the boundary.
    """
    g = fld.grid
    pos = np.asarray(position, float).reshape(3)
    shape = np.asarray(g.shape)
    frac = (pos - g.origin) / g.resolution
    frac = np.clip(frac, 0.0, shape - 1.0)
    i0 = np.minimum(np.floor(frac).astype(int), np.maximum(shape - 2, 0))
    t = frac - i0
    vol = fld.as_volume()
    out = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                ix = min(i0[0] + dx, shape[0] - 1)
                iy = min(i0[1] + dy, shape[1] - 1)
                iz = min(i0[2] + dz, shape[2] - 1)
                w = (
                    (t[0] if dx else 1 - t[0])
                    * (t[1] if dy else 1 - t[1])
                    * (t[2] if dz else 1 - t[2])
                )
                out += w * vol[ix, iy, iz]
    return float(out)


def place_landmarks(world: WorldConfig, seed: int) -> list[Landmark]:
    """Uniform ground-level landmarks on a strip along one side of the space.

    Landmarks sit 1 m below the field volume, on the low-y half of the
    workspace.
    """
    rng = np.random.default_rng(seed)
    lo = world.origin
    hi = world.origin + world.extent
    z = lo[2] - 1.0
    out = []
    for i in range(world.landmark_count):
        x = rng.uniform(lo[0], hi[0])
        y = rng.uniform(lo[1], lo[1] + 0.5 * world.extent[1])
        out.append(Landmark(id=i, position=np.array([x, y, z])))
    return out


def compute_metrics(
    posterior: Posterior,
    fld: GroundTruthField,
    belief: PoseBelief,
    true_pose,
) -> tuple[float, float, float, float]:
    """(Tr(P), map RMSE, Tr(Sigma), pose error) for one measurement event."""
    if posterior.mean.shape[0] != fld.values.shape[0]:
        raise ValueError("posterior and ground truth grids do not match")
    tr_p = posterior.trace
    map_rmse = float(np.sqrt(np.mean((posterior.mean - fld.values) ** 2)))
    tr_sigma = belief.trace
    pose_err = float(np.linalg.norm(belief.mean - np.asarray(true_pose, float)))
    return tr_p, map_rmse, tr_sigma, pose_err
