import numpy as np
import pytest

from amap.pose_graph import (
    CameraModel,
    ControlNoiseModel,
    Landmark,
    PoseBelief,
    PoseGraph,
    SingularSystemError,
    marginal_covariance,
    observe_landmarks,
    predict_along_trajectory,
    simulate_step,
    solve_graph,
)
from amap.trajectory import Waypoints, fit_piecewise_linear


def kalman_smoother(p0, s0, deltas, qs, meas):
    """RTS smoother oracle for a linear chain with position measurements.

    meas: dict node_index -> list of (z, R) direct position observations.
    Returns (means, covariances) for all nodes.
    """
    k = len(deltas) + 1
    means_f, covs_f, means_p, covs_p = [], [], [], []
    m, c = np.asarray(p0, float), np.asarray(s0, float)
    for i in range(k):
        if i > 0:
            m = m + deltas[i - 1]
            c = c + qs[i - 1]
        means_p.append(m.copy())
        covs_p.append(c.copy())
        for z, r in meas.get(i, []):
            gain = c @ np.linalg.inv(c + r)
            m = m + gain @ (z - m)
            c = (np.eye(3) - gain) @ c
        means_f.append(m.copy())
        covs_f.append(c.copy())
    means_s = [None] * k
    covs_s = [None] * k
    means_s[-1], covs_s[-1] = means_f[-1], covs_f[-1]
    for i in range(k - 2, -1, -1):
        gain = covs_f[i] @ np.linalg.inv(covs_p[i + 1])
        means_s[i] = means_f[i] + gain @ (means_s[i + 1] - means_p[i + 1])
        covs_s[i] = covs_f[i] + gain @ (covs_s[i + 1] - covs_p[i + 1]) @ gain.T
    return means_s, covs_s


class TestSimulateStep:
    def test_zero_coefficient_is_exact(self):
        rng = np.random.default_rng(0)
        pose, odom = simulate_step(
            [1, 2, 3], [0.5, -0.2, 0.1], ControlNoiseModel(0.0), rng
        )
        assert np.allclose(pose, [1.5, 1.8, 3.1])
        assert np.allclose(odom, [0.5, -0.2, 0.1])

    def test_zero_control_no_noise(self):
        rng = np.random.default_rng(0)
        pose, _ = simulate_step([1, 1, 1], [0, 0, 0], ControlNoiseModel(0.5), rng)
        assert np.allclose(pose, [1, 1, 1])

    def test_noise_variance_proportional_to_control(self):
        rng = np.random.default_rng(42)
        noise = ControlNoiseModel(0.01)
        xs = np.array(
            [simulate_step([0, 0, 0], [1, 0, 0], noise, rng)[0][0] for _ in range(100_000)]
        )
        assert np.var(xs) == pytest.approx(0.01, rel=0.05)


class TestObserveLandmarks:
    CAM = CameraModel(pixel_sigma=1e-12, depth_sigma=1e-12)

    def test_landmark_directly_below_at_principal_point(self):
        rng = np.random.default_rng(0)
        lms = [Landmark(0, [2.0, 2.0, 0.0])]
        obs = observe_landmarks([2.0, 2.0, 1.5], lms, self.CAM, rng)
        assert len(obs) == 1
        lid, uv, depth = obs[0]
        assert lid == 0
        assert np.allclose(uv, 0.0, atol=1e-6)
        assert depth == pytest.approx(1.5, abs=1e-6)

    def test_landmark_above_camera_not_visible(self):
        rng = np.random.default_rng(0)
        lms = [Landmark(0, [2.0, 2.0, 3.0])]
        assert observe_landmarks([2.0, 2.0, 1.0], lms, self.CAM, rng) == []

    def test_frustum_edge_geometry(self):
        # atan(0.5 / 1.0) = 26.6 deg exceeds 47.9 / 2 = 23.95 deg
        rng = np.random.default_rng(0)
        lms = [Landmark(0, [2.5, 2.0, 0.0])]
        assert observe_landmarks([2.0, 2.0, 1.0], lms, self.CAM, rng) == []
        # closer to the axis it becomes visible
        lms = [Landmark(1, [2.3, 2.0, 0.0])]
        assert len(observe_landmarks([2.0, 2.0, 1.0], lms, self.CAM, rng)) == 1


class TestSolveGraph:
    def test_single_anchored_node(self):
        g = PoseGraph.with_anchor([1.0, 2.0, 0.5], 0.04 * np.eye(3))
        beliefs = solve_graph(g)
        assert np.allclose(beliefs[0].mean, [1.0, 2.0, 0.5], atol=1e-9)
        assert np.allclose(beliefs[0].covariance, 0.04 * np.eye(3), atol=1e-9)
        assert np.allclose(marginal_covariance(g, 0), 0.04 * np.eye(3), atol=1e-9)

    def test_odometry_chain_covariance_grows_linearly(self):
        s0 = 0.01 * np.eye(3)
        q = np.diag([0.02, 0.01, 0.03])
        g = PoseGraph.with_anchor([0, 0, 0], s0)
        for k in range(5):
            g.add_node([k + 1.0, 0, 0])
            g.add_odometry(k, k + 1, [1.0, 0, 0], q)
        beliefs = solve_graph(g)
        assert np.allclose(beliefs[5].mean, [5, 0, 0], atol=1e-9)
        assert np.allclose(beliefs[5].covariance, s0 + 5 * q, atol=1e-9)
        assert np.allclose(marginal_covariance(g, 5), s0 + 5 * q, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_kalman_smoother_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = rng.integers(3, 8)
        p0 = rng.normal(size=3)
        s0 = np.diag(rng.uniform(0.01, 0.1, 3))
        deltas = rng.normal(size=(k, 3))
        qs = [np.diag(rng.uniform(0.005, 0.05, 3)) for _ in range(k)]
        meas = {}
        g = PoseGraph.with_anchor(p0, s0)
        pos = p0.copy()
        for i in range(k):
            pos = pos + deltas[i]
            g.add_node(pos)
            g.add_odometry(i, i + 1, deltas[i], qs[i])
        for i in rng.choice(k + 1, size=3, replace=False):
            z = rng.normal(size=3)
            r = np.diag(rng.uniform(0.01, 0.1, 3))
            g.add_position_factor(int(i), z, r)
            meas.setdefault(int(i), []).append((z, r))
        beliefs = solve_graph(g)
        means_s, covs_s = kalman_smoother(p0, s0, deltas, qs, meas)
        for b, m, c in zip(beliefs, means_s, covs_s):
            assert np.max(np.abs(b.mean - m)) < 1e-6
            assert np.max(np.abs(b.covariance - c)) < 1e-6

    def test_disconnected_graph_raises(self):
        g = PoseGraph.with_anchor([0, 0, 0], 0.01 * np.eye(3))
        g.add_node([1, 0, 0])  # no factor attaching it
        with pytest.raises(SingularSystemError):
            solve_graph(g)

    def test_pinhole_landmark_estimation(self):
        cam = CameraModel(pixel_sigma=0.5, depth_sigma=0.05)
        rng = np.random.default_rng(3)
        truth = np.array([1.0, 1.0, 1.2])
        lm = Landmark(7, [1.1, 0.9, 0.0])
        g = PoseGraph.with_anchor(truth, 1e-6 * np.eye(3))
        obs = observe_landmarks(truth, [lm], cam, rng)
        assert obs
        lid, uv, depth = obs[0]
        guess = truth + cam.back_project(np.array([*uv, depth]))
        g.init_landmark(lid, guess)
        g.add_landmark_observation(0, lid, np.array([*uv, depth]), cam.noise, cam)
        solve_graph(g)
        assert np.linalg.norm(g.landmark_states[7] - lm.position) < 0.2


class TestPrediction:
    @staticmethod
    def setup_graph(with_landmark=False):
        cam = CameraModel()
        g = PoseGraph.with_anchor([1.0, 1.0, 1.0], 0.01 * np.eye(3))
        if with_landmark:
            lm_pos = np.array([2.2, 1.0, 0.0])
            g.init_landmark(0, lm_pos)
            rel = lm_pos - np.array([1.0, 1.0, 1.0])
            g.add_landmark_observation(0, 0, cam.project(rel), cam.noise, cam)
        belief = solve_graph(g)[-1]
        traj = fit_piecewise_linear(
            Waypoints(np.array([belief.mean, [2.0, 1.0, 1.0], [2.5, 1.5, 1.0]])),
            v_ref=0.5,
        )
        return g, belief, traj, cam

    def test_zero_noise_no_landmarks_keeps_covariance(self):
        g, belief, traj, cam = self.setup_graph()
        beliefs = predict_along_trajectory(
            belief, g, traj, [], cam, ControlNoiseModel(0.0)
        )
        for b in beliefs:
            assert b.trace == pytest.approx(belief.trace, abs=1e-6)

    def test_no_landmarks_trace_non_decreasing(self):
        g, belief, traj, cam = self.setup_graph()
        beliefs = predict_along_trajectory(
            belief, g, traj, [], cam, ControlNoiseModel(0.05)
        )
        traces = [b.trace for b in beliefs]
        assert all(b >= a - 1e-12 for a, b in zip(traces, traces[1:]))

    def test_landmark_reobservation_reduces_final_trace(self):
        g_lm, belief, traj, cam = self.setup_graph(with_landmark=True)
        g_no, belief_no, _, _ = self.setup_graph(with_landmark=False)
        noise = ControlNoiseModel(0.05)
        with_lm = predict_along_trajectory(belief, g_lm, traj, [], cam, noise)
        without = predict_along_trajectory(belief_no, g_no, traj, [], cam, noise)
        assert with_lm[-1].trace <= without[-1].trace + 1e-9

    def test_prediction_side_effect_free(self):
        g, belief, traj, cam = self.setup_graph(with_landmark=True)
        sig = g.factor_signature()
        predict_along_trajectory(belief, g, traj, [], cam, ControlNoiseModel(0.02))
        assert g.factor_signature() == sig

    def test_prediction_deterministic(self):
        g, belief, traj, cam = self.setup_graph(with_landmark=True)
        a = predict_along_trajectory(belief, g, traj, [], cam, ControlNoiseModel(0.02))
        b = predict_along_trajectory(belief, g, traj, [], cam, ControlNoiseModel(0.02))
        for x, y in zip(a, b):
            assert np.array_equal(x.mean, y.mean)
            assert np.array_equal(x.covariance, y.covariance)

    def test_start_mismatch_rejected(self):
        g, belief, _, cam = self.setup_graph()
        bad = fit_piecewise_linear(
            Waypoints(np.array([[9.0, 9.0, 9.0], [9.5, 9.0, 9.0]])), v_ref=0.5
        )
        with pytest.raises(ValueError):
            predict_along_trajectory(belief, g, bad, [], cam, ControlNoiseModel(0.01))


def test_information_never_hurts():
    cam = CameraModel()
    rng = np.random.default_rng(8)
    for _ in range(5):
        g = PoseGraph.with_anchor([1.0, 1.0, 1.0], 0.01 * np.eye(3))
        pos = np.array([1.0, 1.0, 1.0])
        for k in range(4):
            step = rng.uniform(-0.3, 0.3, size=3)
            pos = pos + step
            g.add_node(pos)
            g.add_odometry(k, k + 1, step, np.diag(rng.uniform(0.005, 0.02, 3)))
        before = solve_graph(g)[-1].trace
        lm_pos = pos + np.array([0.1, 0.0, -1.0])
        g.init_landmark(0, lm_pos)
        g.add_landmark_observation(4, 0, cam.project(lm_pos - pos), cam.noise, cam)
        # a second observation makes the landmark informative for the chain
        prev = np.asarray(g.nodes[3], float)
        if cam.visible(lm_pos - prev):
            g.add_landmark_observation(3, 0, cam.project(lm_pos - prev), cam.noise, cam)
        after = solve_graph(g)[-1].trace
        assert after <= before + 1e-9
