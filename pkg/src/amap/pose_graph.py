"""Simulated 3-DoF (point-mass position) graph SLAM.

The robot state is position-only; odometry factors are linear, landmark
observations use a downward-facing pinhole camera (pixel coordinates plus
depth). Landmarks first seen during execution enter the graph as estimated
states initialized by inverse projection. Solving is Gauss-Newton least
squares over the stacked whitened factors; marginal covariances come from
the inverse of the information matrix.

Uncertainty prediction along a candidate trajectory extends a deep copy of
the graph with interpolated odometry factors (expected-case, no sampled
noise) and noise-free re-observations of landmarks already in the graph.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SingularSystemError",
    "PoseBelief",
    "Landmark",
    "CameraModel",
    "ControlNoiseModel",
    "OdometryFactor",
    "PinholeFactor",
    "PositionFactor",
    "PoseGraph",
    "simulate_step",
    "observe_landmarks",
    "solve_graph",
    "marginal_covariance",
    "predict_along_trajectory",
]

_ODOM_VAR_FLOOR = 1e-10  # keeps zero-motion odometry factors invertible


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass
class PoseBelief:
    mean: np.ndarray  # (3,)
    covariance: np.ndarray  # (3, 3)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, float).reshape(3)
        self.covariance = np.asarray(self.covariance, float).reshape(3, 3)

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))


@dataclass
class Landmark:
    id: int
    position: np.ndarray  # (3,), ground truth
    estimated: PoseBelief | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, float).reshape(3)


@dataclass(frozen=True)
class CameraModel:
    """Downward-facing pinhole camera observing ground landmarks."""

    fov_deg: tuple[float, float] = (47.9, 36.9)
    pixel_sigma: float = 1.0
    depth_sigma: float = 0.1
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if not all(0.0 < f < 180.0 for f in self.fov_deg):
            raise ValueError("fov components must lie in (0, 180) degrees")

    @property
    def focal_px(self) -> tuple[float, float]:
        fx = 0.5 * self.image_size[0] / np.tan(np.radians(self.fov_deg[0]) / 2)
        fy = 0.5 * self.image_size[1] / np.tan(np.radians(self.fov_deg[1]) / 2)
        return fx, fy

    @property
    def noise(self) -> np.ndarray:
        return np.diag(
            [self.pixel_sigma**2, self.pixel_sigma**2, self.depth_sigma**2]
        )

    def project(self, rel: np.ndarray) -> np.ndarray:
        """(u, v, depth) of a point at camera-relative offset ``rel``."""
        fx, fy = self.focal_px
        depth = -rel[2]
        return np.array([fx * rel[0] / depth, fy * rel[1] / depth, depth])

    def project_jacobian(self, rel: np.ndarray) -> np.ndarray:
        """d(u, v, depth) / d(rel)."""
        fx, fy = self.focal_px
        d = -rel[2]
        return np.array(
            [
                [fx / d, 0.0, fx * rel[0] / d**2],
                [0.0, fy / d, fy * rel[1] / d**2],
                [0.0, 0.0, -1.0],
            ]
        )

    def back_project(self, meas: np.ndarray) -> np.ndarray:
        """Camera-relative offset from a (u, v, depth) measurement."""
        fx, fy = self.focal_px
        u, v, depth = meas
        return np.array([u * depth / fx, v * depth / fy, -depth])

    def visible(self, rel: np.ndarray) -> bool:
        depth = -rel[2]
        if depth <= 0:
            return False
        half_h = np.radians(self.fov_deg[0]) / 2
        half_v = np.radians(self.fov_deg[1]) / 2
        return (
            np.arctan2(abs(rel[0]), depth) <= half_h
            and np.arctan2(abs(rel[1]), depth) <= half_v
        )


@dataclass(frozen=True)
class ControlNoiseModel:
    """Per-axis noise variance proportional to the control magnitude."""

    coefficient: float = 0.01

    def __post_init__(self):
        if self.coefficient < 0:
            raise ValueError("coefficient must be >= 0")

    def variance(self, control: np.ndarray) -> np.ndarray:
        return self.coefficient * np.abs(np.asarray(control, float))


@dataclass
class OdometryFactor:
    i: int
    j: int
    delta: np.ndarray  # (3,)
    noise: np.ndarray  # (3, 3)


@dataclass
class PinholeFactor:
    node: int
    landmark_id: int
    measurement: np.ndarray  # (u, v, depth)
    noise: np.ndarray  # (3, 3)
    camera: CameraModel = None


@dataclass
class PositionFactor:
    """Linear direct observation of a node position (known-landmark style)."""

    node: int
    measurement: np.ndarray  # (3,)
    noise: np.ndarray  # (3, 3)


@dataclass
class PoseGraph:
    anchor_mean: np.ndarray
    anchor_cov: np.ndarray
    nodes: list = field(default_factory=list)  # (3,) estimates
    odometry_factors: list = field(default_factory=list)
    landmark_factors: list = field(default_factory=list)
    position_factors: list = field(default_factory=list)
    landmark_states: dict = field(default_factory=dict)  # id -> (3,) estimate

    @classmethod
    def with_anchor(cls, mean, cov) -> "PoseGraph":
        mean = np.asarray(mean, float).reshape(3)
        return cls(
            anchor_mean=mean,
            anchor_cov=np.asarray(cov, float).reshape(3, 3),
            nodes=[mean.copy()],
        )

    def add_node(self, guess) -> int:
        self.nodes.append(np.asarray(guess, float).reshape(3))
        return len(self.nodes) - 1

    def add_odometry(self, i, j, delta, noise) -> None:
        self.odometry_factors.append(
            OdometryFactor(i, j, np.asarray(delta, float), np.asarray(noise, float))
        )

    def add_landmark_observation(
        self, node, landmark_id, measurement, noise, camera
    ) -> None:
        self.landmark_factors.append(
            PinholeFactor(
                node,
                landmark_id,
                np.asarray(measurement, float),
                np.asarray(noise, float),
                camera,
            )
        )

    def add_position_factor(self, node, measurement, noise) -> None:
        self.position_factors.append(
            PositionFactor(node, np.asarray(measurement, float), np.asarray(noise, float))
        )

    def init_landmark(self, landmark_id, guess) -> None:
        if landmark_id not in self.landmark_states:
            self.landmark_states[landmark_id] = np.asarray(guess, float).reshape(3)

    def copy(self) -> "PoseGraph":
        return copy.deepcopy(self)

    def factor_signature(self) -> tuple:
        """Content hash used to verify prediction side-effect freedom."""
        import hashlib

        h = hashlib.sha1()
        for f in self.odometry_factors:
            h.update(np.asarray([f.i, f.j], float).tobytes())
            h.update(f.delta.tobytes())
            h.update(f.noise.tobytes())
        for f in self.landmark_factors:
            h.update(np.asarray([f.node, f.landmark_id], float).tobytes())
            h.update(f.measurement.tobytes())
        for f in self.position_factors:
            h.update(np.asarray([f.node], float).tobytes())
            h.update(f.measurement.tobytes())
        return (len(self.nodes), len(self.landmark_states), h.hexdigest())


def simulate_step(true_pose, control, noise: ControlNoiseModel, rng):
    """Execute one control: noisy realized motion, noiseless commanded odometry."""
    true_pose = np.asarray(true_pose, float)
    control = np.asarray(control, float)
    var = noise.variance(control)
    eps = rng.normal(size=3) * np.sqrt(var)
    return true_pose + control + eps, control.copy()


def observe_landmarks(pose, landmarks, cam: CameraModel, rng):
    """Noisy (id, u, v, depth) tuples for landmarks in the downward frustum."""
    pose = np.asarray(pose, float)
    out = []
    for lm in landmarks:
        rel = lm.position - pose
        if not cam.visible(rel):
            continue
        meas = cam.project(rel)
        noisy = meas + rng.normal(size=3) * np.array(
            [cam.pixel_sigma, cam.pixel_sigma, cam.depth_sigma]
        )
        out.append((lm.id, noisy[:2].copy(), float(noisy[2])))
    return out


def _state_layout(graph: PoseGraph):
    n_nodes = len(graph.nodes)
    lm_ids = sorted(graph.landmark_states)
    lm_index = {lid: n_nodes + k for k, lid in enumerate(lm_ids)}
    dim = 3 * (n_nodes + len(lm_ids))
    return lm_ids, lm_index, dim


def _check_connected(graph: PoseGraph) -> None:
    n = len(graph.nodes)
    adj = [[] for _ in range(n)]
    for f in graph.odometry_factors:
        if not (0 <= f.i < n and 0 <= f.j < n):
            raise SingularSystemError("odometry factor index out of range")
        adj[f.i].append(f.j)
        adj[f.j].append(f.i)
    seen = {0}
    stack = [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    if len(seen) != n:
        raise SingularSystemError("graph not connected from the anchored node")


def _gauss_newton(graph: PoseGraph, max_iters=10, tol=1e-8):
    lm_ids, lm_index, dim = _state_layout(graph)
    n_nodes = len(graph.nodes)
    x = np.concatenate(
        [np.asarray(p, float) for p in graph.nodes]
        + [graph.landmark_states[lid] for lid in lm_ids]
    ) if lm_ids else np.concatenate([np.asarray(p, float) for p in graph.nodes])

    def node_slice(i):
        return slice(3 * i, 3 * i + 3)

    def lm_slice(lid):
        k = lm_index[lid]
        return slice(3 * k, 3 * k + 3)

    try:
        anchor_w = np.linalg.cholesky(np.linalg.inv(graph.anchor_cov))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("anchor covariance not invertible") from exc

    info = None
    for _ in range(max_iters):
        n_res = 3 * (
            1
            + len(graph.odometry_factors)
            + len(graph.position_factors)
            + len(graph.landmark_factors)
        )
        jac = np.zeros((n_res, dim))
        res = np.zeros(n_res)
        r = 0

        # anchor prior
        jac[r : r + 3, node_slice(0)] = anchor_w.T
        res[r : r + 3] = anchor_w.T @ (x[node_slice(0)] - graph.anchor_mean)
        r += 3

        for f in graph.odometry_factors:
            w = np.linalg.cholesky(np.linalg.inv(f.noise)).T
            jac[r : r + 3, node_slice(f.j)] = w
            jac[r : r + 3, node_slice(f.i)] = -w
            res[r : r + 3] = w @ (x[node_slice(f.j)] - x[node_slice(f.i)] - f.delta)
            r += 3

        for f in graph.position_factors:
            w = np.linalg.cholesky(np.linalg.inv(f.noise)).T
            jac[r : r + 3, node_slice(f.node)] = w
            res[r : r + 3] = w @ (x[node_slice(f.node)] - f.measurement)
            r += 3

        for f in graph.landmark_factors:
            cam = f.camera
            li = lm_slice(f.landmark_id)
            rel = x[li] - x[node_slice(f.node)]
            w = np.linalg.cholesky(np.linalg.inv(f.noise)).T
            jh = cam.project_jacobian(rel)
            jac[r : r + 3, li] = w @ jh
            jac[r : r + 3, node_slice(f.node)] = -w @ jh
            res[r : r + 3] = w @ (cam.project(rel) - f.measurement)
            r += 3

        info = jac.T @ jac
        rhs = -jac.T @ res
        try:
            step = np.linalg.solve(info, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError("normal equations singular") from exc
        x = x + step
        if np.linalg.norm(step) < tol:
            break

    return x, info, lm_ids, lm_index


def solve_graph(graph: PoseGraph, max_iters: int = 10) -> list[PoseBelief]:
    """Gauss-Newton solve; returns mean and marginal covariance per node.

    Node estimates and landmark states in the graph are updated in place
    with the solution.
    """
    _check_connected(graph)
    x, info, lm_ids, _ = _gauss_newton(graph, max_iters=max_iters)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("information matrix singular") from exc
    beliefs = []
    for i in range(len(graph.nodes)):
        sl = slice(3 * i, 3 * i + 3)
        graph.nodes[i] = x[sl].copy()
        c = cov[sl, sl]
        beliefs.append(PoseBelief(mean=x[sl].copy(), covariance=0.5 * (c + c.T)))
    n_nodes = len(graph.nodes)
    for k, lid in enumerate(lm_ids):
        sl = slice(3 * (n_nodes + k), 3 * (n_nodes + k) + 3)
        graph.landmark_states[lid] = x[sl].copy()
    graph._last_marginals = beliefs  # cached for marginal_covariance
    return beliefs


def marginal_covariance(graph: PoseGraph, node_index: int) -> np.ndarray:
    """Marginal covariance of one node from the latest solve."""
    beliefs = getattr(graph, "_last_marginals", None)
    if beliefs is None:
        beliefs = solve_graph(graph)
    return beliefs[node_index].covariance


def predict_along_trajectory(
    belief: PoseBelief,
    graph: PoseGraph,
    traj,
    landmarks,
    cam: CameraModel,
    noise: ControlNoiseModel,
    interp_hz: float = 0.5,
) -> list[PoseBelief]:
    """Expected-case belief sequence along a candidate trajectory.

    Operates on a deep copy of the graph: interpolated odometry factors get
    the control-magnitude noise model without sampled noise, and landmarks
    already estimated in the graph are re-observed noise-free whenever the
    predicted pose puts them inside the camera frustum.
    """
    start = traj.position(0.0)
    if np.linalg.norm(start - belief.mean) > 1e-6:
        raise ValueError("trajectory must start at the current belief mean")

    times = _interp_times(traj.total_duration, interp_hz)
    positions = traj.positions(times)

    work = graph.copy()
    base = len(work.nodes) - 1
    prev_pos = positions[0]
    new_nodes = [base]
    for pos in positions[1:]:
        delta = pos - prev_pos
        var = np.maximum(noise.variance(delta), _ODOM_VAR_FLOOR)
        idx = work.add_node(pos)
        work.add_odometry(new_nodes[-1], idx, delta, np.diag(var))
        # expected re-observations of landmarks already in the graph
        for lid, est in work.landmark_states.items():
            rel = est - pos
            if cam.visible(rel):
                work.add_landmark_observation(idx, lid, cam.project(rel), cam.noise, cam)
        new_nodes.append(idx)
        prev_pos = pos

    beliefs = solve_graph(work)
    return [beliefs[i] for i in new_nodes]


def _interp_times(duration: float, interp_hz: float) -> np.ndarray:
    dt = 1.0 / interp_hz
    times = list(np.arange(0.0, duration, dt))
    if not times or duration - times[-1] > 1e-9:
        times.append(duration)
    return np.asarray(times)
