"""Fixed-horizon informative replanning and the mission executor.

Replanning is two-step: a sequential greedy search over a coarse viewpoint
lattice seeds an evolutionary refinement of all free waypoints. During
planning, local copies of the map covariance and the pose belief are rolled
forward: the pose evolution along a candidate segment is predicted through
the SLAM graph, and the map covariance is conditioned on hypothetical
measurements at the predicted sites (expected kernel inflation when mapping
with uncertain inputs). Candidate scores come from ``amap.utility``.

Baselines: a sampling-based information-gathering tree and random waypoint
selection. The mission executor alternates replanning and simulated
execution until the time budget is exhausted.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from . import _backend
from .cmaes import cmaes_minimize
from .gp import ObservedInput, QueryGrid, TrainingSet, chol_with_jitter, gp_predict
from .kernels import KernelSpec
from .pose_graph import (
    CameraModel,
    ControlNoiseModel,
    PoseBelief,
    PoseGraph,
    observe_landmarks,
    simulate_step,
    solve_graph,
)
from .quadrature import GaussHermiteRule, UncertainPoint, quadrature_points
from .sim_env import GroundTruthField, WorldConfig, compute_metrics, sample_field
from .trajectory import (
    Waypoints,
    fit_piecewise_linear,
    fit_trajectory,
    sample_sites,
    trajectory_cost,
)
from .utility import PredictionBundle, UtilityKind, UtilityVariant, utility_evaluate

__all__ = [
    "Workspace",
    "Lattice",
    "CmaesSettings",
    "PlannerConfig",
    "PlanningState",
    "MissionEnv",
    "TrialRow",
    "greedy_grid_search",
    "cmaes_refine",
    "rig_tree_plan",
    "random_plan",
    "run_mission",
]

_ODOM_FLOOR = 1e-10


@dataclass(frozen=True)
class Workspace:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, float).reshape(3))
        object.__setattr__(self, "upper", np.asarray(self.upper, float).reshape(3))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    def sample(self, rng) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def clip(self, p) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)


@dataclass(frozen=True)
class Lattice:
    points: np.ndarray  # (L, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, float).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise ValueError("lattice must be non-empty")
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, workspace: Workspace, shape=(3, 3, 3)) -> "Lattice":
        axes = [
            np.linspace(workspace.lower[d], workspace.upper[d], shape[d])
            for d in range(3)
        ]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return cls(np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1))


@dataclass(frozen=True)
class CmaesSettings:
    sigma0: float = 0.25
    max_evals: int = 2000
    popsize: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")


@dataclass(frozen=True)
class PlannerConfig:
    n_waypoints: int
    lattice: Lattice
    workspace: Workspace
    utility: UtilityKind
    cmaes: CmaesSettings = CmaesSettings()
    v_ref: float = 0.5
    a_ref: float = 0.5
    sensor_rate_hz: float = 0.25
    interp_hz: float = 0.5
    traj_backend: str = "minsnap"  # or "linear"
    traj_order: int = 12
    rig_step: float = 5.0
    rig_iterations: int = 60

    def __post_init__(self):
        if self.n_waypoints < 2:
            raise ValueError("need at least 2 waypoints")

    def fit(self, points: np.ndarray):
        wp = Waypoints(points)
        if self.traj_backend == "linear":
            return fit_piecewise_linear(wp, self.v_ref)
        return fit_trajectory(wp, self.v_ref, self.a_ref, order=self.traj_order)


@dataclass
class PlanningState:
    """Snapshot handed to the planners at a replanning event."""

    train: TrainingSet
    spec: KernelSpec
    grid: QueryGrid
    rule: GaussHermiteRule
    mapping_mode: str  # "plain" | "expected"
    belief: PoseBelief
    graph: PoseGraph
    cam: CameraModel
    control_noise: ControlNoiseModel
    elapsed: float = 0.0


class _Rollout:
    """Local copies of map covariance and pose belief for one replan.

    Keeps the committed Gram factorization and appends hypothetical
    measurement blocks per candidate; only the posterior trace over the
    grid is needed, never the full covariance.
    """

    def __init__(self, state: PlanningState, cfg: PlannerConfig):
        self.state = state
        self.cfg = cfg
        hp = state.spec.hyperparams
        self.sf2 = hp.signal_variance
        self.sn2 = hp.noise_variance
        self.fam = _backend.family_code(state.spec.family)
        self.ls = hp.length_scale
        self.grid_pts = state.grid.points
        self.n_grid = self.grid_pts.shape[0]
        self.expected = state.mapping_mode == "expected"
        if self.expected:
            _, self.qweights = quadrature_points(
                UncertainPoint.from_moments(np.zeros(3), np.eye(3)), state.rule
            )
        else:
            self.qweights = None

        n = len(state.train)
        self.clouds = self._make_clouds(state.train.means, state.train.covariances)
        if n:
            k_xx = self._pair(self.clouds, self.clouds)
            k_xx = 0.5 * (k_xx + k_xx.T)
            np.fill_diagonal(k_xx, self.sf2)
            self.m_comm = k_xx + self.sn2 * np.eye(n)
            self.k_all = self._cross(self.clouds)  # (G, n)
        else:
            self.m_comm = np.zeros((0, 0))
            self.k_all = np.zeros((self.n_grid, 0))
        self.graph = state.graph.copy()
        self.belief = state.belief
        self.position = state.belief.mean.copy()

    # cloud = quadrature evaluation points per input, or the bare mean in
    # plain mode (a single "node" with weight 1)
    def _make_clouds(self, means, covs) -> np.ndarray:
        means = np.asarray(means, float).reshape(-1, 3)
        if not self.expected:
            return means[:, None, :]
        covs = np.asarray(covs, float).reshape(-1, 3, 3)
        out = np.empty((means.shape[0], self.state.rule.order**3, 3))
        for i in range(means.shape[0]):
            pts, _ = quadrature_points(
                UncertainPoint.from_moments(means[i], covs[i]), self.state.rule
            )
            out[i] = pts
        return out

    def _weights(self, clouds) -> np.ndarray:
        if self.expected:
            return self.qweights
        return np.ones(1)

    def _pair(self, ca, cb) -> np.ndarray:
        return _backend.pair_cross(
            self.fam, self.sf2, self.ls, ca, self._weights(ca), cb, self._weights(cb)
        )

    def _cross(self, clouds) -> np.ndarray:
        return _backend.cross_gram(
            self.fam, self.sf2, self.ls, clouds, self._weights(clouds), self.grid_pts
        ).T

    def current_trace(self) -> float:
        return self._trace_of(self.m_comm, self.k_all)

    def _trace_of(self, m, k_all) -> float:
        prior = self.n_grid * self.sf2
        if m.shape[0] == 0:
            return prior
        factor, _ = chol_with_jitter(m, self.sf2)
        v = cho_solve(factor, k_all.T)
        return prior - float(np.sum(k_all.T * v))

    def _hypo_blocks(self, means, covs):
        clouds = self._make_clouds(means, covs)
        m_new = clouds.shape[0]
        b = (
            self._pair(self.clouds, clouds)
            if self.clouds.shape[0]
            else np.zeros((0, m_new))
        )
        d = self._pair(clouds, clouds)
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, self.sf2)
        k_new = self._cross(clouds)
        n = self.m_comm.shape[0]
        m = np.empty((n + m_new, n + m_new))
        m[:n, :n] = self.m_comm
        m[:n, n:] = b
        m[n:, :n] = b.T
        m[n:, n:] = d + self.sn2 * np.eye(m_new)
        k_all = np.hstack([self.k_all, k_new])
        return clouds, m, k_all

    def predict_segment(self, waypoints: np.ndarray):
        """Predict along a trajectory from the current local position.

        Returns (score payload) or None when the trajectory is degenerate.
        """
        pts = np.vstack([self.position[None, :], np.atleast_2d(waypoints)])
        try:
            traj = self.cfg.fit(pts)
        except ValueError:
            return None
        duration = trajectory_cost(traj)
        sites = sample_sites(traj, self.cfg.sensor_rate_hz, t0=0.0)
        # the t = 0 site duplicates the last committed measurement
        keep = sites.times > 1e-9
        site_times = sites.times[keep]
        site_pos = sites.positions[keep]
        if site_times.size == 0:
            site_times = np.array([duration])
            site_pos = traj.positions(site_times)

        beliefs = _predict_beliefs(
            self.graph, traj, self.state.cam, self.state.control_noise,
            self.cfg.interp_hz,
        )
        node_times = _interp_times(duration, self.cfg.interp_hz)
        idx = np.array(
            [int(np.argmin(np.abs(node_times - t))) for t in site_times]
        )
        pose_traces = np.array([beliefs[i].trace for i in idx])
        if self.expected:
            covs = np.array([beliefs[i].covariance for i in idx])
        else:
            covs = np.zeros((len(idx), 3, 3))
        return {
            "traj": traj,
            "duration": duration,
            "site_means": site_pos,
            "site_covs": covs,
            "pose_traces": pose_traces,
            "beliefs": beliefs,
        }

    def score_segment(self, payload, kind: UtilityKind) -> float:
        prior = self.current_trace()
        _, m, k_all = self._hypo_blocks(payload["site_means"], payload["site_covs"])
        post = self._trace_of(m, k_all)
        bundle = PredictionBundle(
            prior_trace=max(prior, 1e-300),
            posterior_trace=max(post, 1e-300),
            pose_traces=tuple(payload["pose_traces"]),
            duration=payload["duration"],
        )
        return utility_evaluate(kind, bundle)

    def commit(self, payload) -> None:
        clouds, m, k_all = self._hypo_blocks(
            payload["site_means"], payload["site_covs"]
        )
        self.clouds = (
            np.concatenate([self.clouds, clouds])
            if self.clouds.shape[0]
            else clouds
        )
        self.m_comm = m
        self.k_all = k_all
        self.graph = _extend_graph(
            self.graph, payload["traj"], self.state.cam, self.state.control_noise,
            self.cfg.interp_hz,
        )
        solve_graph(self.graph)
        self.belief = payload["beliefs"][-1]
        self.position = payload["traj"].position(payload["traj"].total_duration)


def _interp_times(duration: float, interp_hz: float) -> np.ndarray:
    dt = 1.0 / interp_hz
    times = list(np.arange(0.0, duration, dt))
    if not times or duration - times[-1] > 1e-9:
        times.append(duration)
    return np.asarray(times)


def _extend_graph(graph, traj, cam, noise, interp_hz) -> PoseGraph:
    """Deep-copied graph with expected-case factors along the trajectory."""
    work = graph.copy()
    times = _interp_times(traj.total_duration, interp_hz)
    positions = traj.positions(times)
    prev_idx = len(work.nodes) - 1
    prev_pos = positions[0]
    for pos in positions[1:]:
        delta = pos - prev_pos
        var = np.maximum(noise.variance(delta), _ODOM_FLOOR)
        idx = work.add_node(pos)
        work.add_odometry(prev_idx, idx, delta, np.diag(var))
        for lid, est in work.landmark_states.items():
            rel = est - pos
            if cam.visible(rel):
                work.add_landmark_observation(idx, lid, cam.project(rel), cam.noise, cam)
        prev_idx = idx
        prev_pos = pos
    return work


def _predict_beliefs(graph, traj, cam, noise, interp_hz):
    work = _extend_graph(graph, traj, cam, noise, interp_hz)
    n_new = len(work.nodes) - len(graph.nodes)
    beliefs = solve_graph(work)
    start = len(graph.nodes) - 1
    return beliefs[start : start + n_new + 1]


def _resolve_utility(kind: UtilityKind, state: PlanningState, cfg: PlannerConfig):
    """Fill in the bound normalization of the weighted-linear composite."""
    if kind.variant is not UtilityVariant.WEIGHTED_LINEAR:
        return kind
    map_bound = len(state.grid) * state.spec.hyperparams.signal_variance
    # pose bound: open-loop covariance growth toward the farthest lattice point
    far = cfg.lattice.points[
        int(np.argmax(np.linalg.norm(cfg.lattice.points - state.belief.mean, axis=1)))
    ]
    dist = np.linalg.norm(far - state.belief.mean)
    steps = max(1, int(np.ceil(dist / cfg.v_ref * cfg.interp_hz)))
    per_step = 3.0 * state.control_noise.coefficient * dist / steps
    pose_bound = max(state.belief.trace + steps * per_step, 1e-9)
    return dataclasses.replace(kind, map_bound=map_bound, pose_bound=pose_bound)


def greedy_grid_search(state: PlanningState, cfg: PlannerConfig) -> Waypoints:
    """Sequential next-best-viewpoint selection over the lattice."""
    kind = _resolve_utility(cfg.utility, state, cfg)
    rollout = _Rollout(state, cfg)
    chosen = [state.belief.mean.copy()]
    while len(chosen) < cfg.n_waypoints:
        best_score, best_payload, best_point = -np.inf, None, None
        for q in cfg.lattice.points:
            payload = rollout.predict_segment(q[None, :])
            if payload is None:
                continue
            score = rollout.score_segment(payload, kind)
            if score > best_score:  # ties: lowest lattice index wins
                best_score, best_payload, best_point = score, payload, q
        if best_payload is None:
            best_point = rollout.position
            chosen.append(best_point.copy())
            continue
        rollout.commit(best_payload)
        chosen.append(np.asarray(best_point, float).copy())
    return Waypoints(np.array(chosen))


def _full_plan_score(
    points: np.ndarray, rollout: "_Rollout", kind: UtilityKind
) -> float:
    payload = rollout.predict_segment(points)
    if payload is None:
        return -np.inf
    return rollout.score_segment(payload, kind)


def cmaes_refine(
    seed_waypoints: Waypoints, state: PlanningState, cfg: PlannerConfig
) -> Waypoints:
    """Evolutionary refinement of the free waypoints (start stays clamped)."""
    kind = _resolve_utility(cfg.utility, state, cfg)
    start = seed_waypoints.points[0]
    free0 = seed_waypoints.points[1:].ravel()
    if cfg.cmaes.max_evals <= 0:
        return seed_waypoints
    rollout = _Rollout(state, cfg)  # shared: evaluation never mutates it

    def objective(x: np.ndarray) -> float:
        pts = x.reshape(-1, 3)
        score = _full_plan_score(pts, rollout, kind)
        return -score if np.isfinite(score) else 1e12

    n_free = free0.size // 3
    lower = np.tile(cfg.workspace.lower, n_free)
    upper = np.tile(cfg.workspace.upper, n_free)
    res = cmaes_minimize(
        objective,
        free0,
        cfg.cmaes.sigma0,
        max_evals=cfg.cmaes.max_evals,
        seed=cfg.cmaes.seed,
        popsize=cfg.cmaes.popsize,
        lower=lower,
        upper=upper,
        penalty_weight=100.0,
    )
    refined = np.vstack([start[None, :], res.x.reshape(-1, 3)])
    return Waypoints(refined)


def rig_tree_plan(
    state: PlanningState,
    cfg: PlannerConfig,
    rng,
) -> Waypoints:
    """Information-gathering tree baseline: sample, steer, score, best leaf."""
    kind = _resolve_utility(cfg.utility, state, cfg)
    rollout = _Rollout(state, cfg)
    root = state.belief.mean.copy()
    vertices = [root]
    parents = [-1]
    scores = [-np.inf]

    def path_points(v: int) -> np.ndarray:
        chain = []
        while v != -1:
            chain.append(vertices[v])
            v = parents[v]
        return np.array(chain[::-1])

    for _ in range(cfg.rig_iterations):
        sample = cfg.workspace.sample(rng)
        dists = np.linalg.norm(np.asarray(vertices) - sample, axis=1)
        nearest = int(np.argmin(dists))
        direction = sample - vertices[nearest]
        dist = np.linalg.norm(direction)
        if dist < 1e-9:
            continue
        step = min(dist, cfg.rig_step)
        new_pt = vertices[nearest] + direction / dist * step
        vertices.append(new_pt)
        parents.append(nearest)
        pts = path_points(len(vertices) - 1)
        scores.append(_full_plan_score(pts[1:], rollout, kind))

    best = int(np.argmax(scores))
    if best == 0 or not np.isfinite(scores[best]):
        return random_plan(state, cfg, rng)
    return Waypoints(path_points(best))


def random_plan(state: PlanningState, cfg: PlannerConfig, rng) -> Waypoints:
    """Uniform random destinations in the workspace, start clamped."""
    pts = [state.belief.mean.copy()]
    for _ in range(cfg.n_waypoints - 1):
        pts.append(cfg.workspace.sample(rng))
    return Waypoints(np.array(pts))


@dataclass
class MissionEnv:
    """Everything a single simulated mission needs."""

    world: WorldConfig
    fld: GroundTruthField
    landmarks: list
    cam: CameraModel
    control_noise: ControlNoiseModel
    spec: KernelSpec
    rule: GaussHermiteRule
    mapping_mode: str = "expected"
    anchor_sigma: float = 0.05
    prior_mean: float = 0.0


@dataclass(frozen=True)
class TrialRow:
    time: float
    tr_p: float
    map_rmse: float
    tr_sigma: float
    pose_err: float

    def __post_init__(self):
        for name in ("time", "tr_p", "map_rmse", "tr_sigma", "pose_err"):
            object.__setattr__(self, name, float(getattr(self, name)))


def run_mission(
    env: MissionEnv,
    planner_choice: str,
    cfg: PlannerConfig,
    budget: float,
    seed: int,
    artifacts: dict | None = None,
) -> list[TrialRow]:
    """Alternate replanning and execution until the budget is exhausted.

    ``planner_choice`` is one of "two_step", "rig_tree", "random". A failed
    replan falls back to a random plan for one horizon. When ``artifacts``
    is a dict it receives the final posterior mean and the estimated/true
    positions at the measurement events.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    grid = env.fld.grid
    rng = np.random.default_rng([seed, 0xA1])
    plan_rng = np.random.default_rng([seed, 0xB2])

    true_pose = env.world.start.copy()
    graph = PoseGraph.with_anchor(true_pose, env.anchor_sigma**2 * np.eye(3))
    belief = solve_graph(graph)[0]
    train = TrainingSet.empty()
    rows: list[TrialRow] = []
    hp = env.spec.hyperparams
    meas_dt = 1.0 / env.world.sensor_rate_hz

    def take_measurement(global_t: float):
        nonlocal train
        value = sample_field(env.fld, true_pose) + np.sqrt(
            hp.noise_variance
        ) * rng.normal()
        train = train.extended(
            ObservedInput(belief.mean.copy(), belief.covariance.copy()), value
        )
        posterior = gp_predict(
            train, grid, env.spec, kernel_mode=env.mapping_mode, rule=env.rule,
            prior=env.prior_mean,
        )
        tr_p, rmse, tr_s, perr = compute_metrics(posterior, env.fld, belief, true_pose)
        rows.append(TrialRow(global_t, tr_p, rmse, tr_s, perr))
        if artifacts is not None:
            artifacts["posterior_mean"] = posterior.mean.copy()
            artifacts.setdefault("times", []).append(global_t)
            artifacts.setdefault("est_positions", []).append(belief.mean.copy())
            artifacts.setdefault("true_positions", []).append(true_pose.copy())

    take_measurement(0.0)
    next_meas = meas_dt
    elapsed = 0.0
    replan_idx = 0

    while elapsed < budget:
        state = PlanningState(
            train=train,
            spec=env.spec,
            grid=grid,
            rule=env.rule,
            mapping_mode=env.mapping_mode,
            belief=belief,
            graph=graph,
            cam=env.cam,
            control_noise=env.control_noise,
            elapsed=elapsed,
        )
        cfg_r = dataclasses.replace(
            cfg, cmaes=dataclasses.replace(cfg.cmaes, seed=seed * 1000 + replan_idx)
        )
        replan_idx += 1
        try:
            if planner_choice == "two_step":
                wp = greedy_grid_search(state, cfg_r)
                wp = cmaes_refine(wp, state, cfg_r)
            elif planner_choice == "rig_tree":
                wp = rig_tree_plan(state, cfg_r, plan_rng)
            elif planner_choice == "random":
                wp = random_plan(state, cfg_r, plan_rng)
            else:
                raise ValueError(f"unknown planner {planner_choice!r}")
            traj = cfg_r.fit(wp.points)
        except Exception:
            wp = random_plan(state, cfg_r, plan_rng)
            traj = cfg_r.fit(wp.points)

        times = _interp_times(traj.total_duration, cfg.interp_hz)
        positions = traj.positions(times)
        prev_plan = positions[0]
        stop = False
        for k, pos in enumerate(positions[1:], start=1):
            control = pos - prev_plan
            prev_plan = pos
            true_new, odom = simulate_step(
                true_pose, control, env.control_noise, rng
            )
            true_pose = true_new
            var = np.maximum(env.control_noise.variance(odom), _ODOM_FLOOR)
            prev_idx = len(graph.nodes) - 1
            idx = graph.add_node(belief.mean + odom)
            graph.add_odometry(prev_idx, idx, odom, np.diag(var))
            for lid, uv, depth in observe_landmarks(
                true_pose, env.landmarks, env.cam, rng
            ):
                meas = np.array([uv[0], uv[1], depth])
                if lid not in graph.landmark_states:
                    guess = graph.nodes[idx] + env.cam.back_project(meas)
                    graph.init_landmark(lid, guess)
                graph.add_landmark_observation(idx, lid, meas, env.cam.noise, env.cam)
            beliefs = solve_graph(graph)
            belief = beliefs[idx]

            global_t = elapsed + times[k]
            if global_t + 1e-9 >= next_meas:
                take_measurement(global_t)
                next_meas += meas_dt
            if global_t >= budget:
                stop = True
                break
        elapsed += traj.total_duration
        if stop:
            break

    return rows
