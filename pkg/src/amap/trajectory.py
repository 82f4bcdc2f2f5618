"""Polynomial trajectories through ordered control waypoints.

Each of the N-1 segments is a k-order polynomial in normalized segment time
tau in [0, 1]. Coefficients minimize the integrated squared snap subject to
waypoint interpolation, derivative continuity up to 4th order at junctions,
and zero velocity/acceleration at both trajectory ends. Segment durations
come from a trapezoidal-speed heuristic on inter-waypoint distances.

A piecewise-linear backend (constant speed, order-1 segments) is available
behind the same interface for ground-robot style plans.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

__all__ = [
    "DegenerateWaypointsError",
    "Waypoints",
    "PolyTrajectory",
    "MeasurementSites",
    "allocate_durations",
    "fit_trajectory",
    "fit_piecewise_linear",
    "sample_sites",
    "trajectory_cost",
]

DURATION_FLOOR = 0.1  # seconds, for degenerate (near-duplicate) segments
_NEAR_DUPLICATE = 1e-9  # meters


class DegenerateWaypointsError(ValueError):
    pass


@dataclass(frozen=True)
class Waypoints:
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, float).reshape(-1, 3)
        if pts.shape[0] < 2:
            raise ValueError("need at least 2 waypoints")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MeasurementSites:
    times: np.ndarray  # (S,)
    positions: np.ndarray  # (S, 3)


@dataclass(frozen=True)
class PolyTrajectory:
    """Per-segment polynomial coefficients in normalized time.

    coeffs[s, i, d] multiplies tau^i on segment s, axis d, where
    tau = (t - t_s) / durations[s].
    """

    coeffs: np.ndarray  # (S, order + 1, 3)
    durations: np.ndarray  # (S,)

    @property
    def order(self) -> int:
        return self.coeffs.shape[1] - 1

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    @property
    def start_times(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)[:-1]])

    def _locate(self, t: float) -> tuple[int, float]:
        t = min(max(t, 0.0), self.total_duration)
        starts = self.start_times
        seg = int(np.searchsorted(starts, t, side="right") - 1)
        seg = min(seg, self.coeffs.shape[0] - 1)
        tau = (t - starts[seg]) / self.durations[seg]
        return seg, min(max(tau, 0.0), 1.0)

    def position(self, t: float) -> np.ndarray:
        return self.derivative(t, 0)

    def derivative(self, t: float, order: int) -> np.ndarray:
        """Time derivative of the given order at time t (order 0 = position)."""
        seg, tau = self._locate(t)
        c = self.coeffs[seg]
        n = c.shape[0]
        out = np.zeros(3)
        for i in range(order, n):
            scale = factorial(i) / factorial(i - order)
            out += scale * tau ** (i - order) * c[i]
        return out / self.durations[seg] ** order

    def positions(self, ts: np.ndarray) -> np.ndarray:
        return np.array([self.position(t) for t in np.asarray(ts, float).ravel()])

    def time_scaled(self, factor: float) -> "PolyTrajectory":
        """Same geometric path traversed with all durations scaled."""
        return PolyTrajectory(self.coeffs, self.durations * float(factor))


def allocate_durations(points: np.ndarray, v_ref: float, a_ref: float) -> np.ndarray:
    """Trapezoidal-speed heuristic: cruise time plus an acceleration ramp."""
    d = np.linalg.norm(np.diff(points, axis=0), axis=1)
    t = d / v_ref + v_ref / a_ref * (1.0 - np.exp(-d / max(v_ref**2 / a_ref, 1e-12)))
    return np.maximum(t, DURATION_FLOOR)


def _derivative_row(order_poly: int, deriv: int, tau: float) -> np.ndarray:
    row = np.zeros(order_poly + 1)
    for i in range(deriv, order_poly + 1):
        row[i] = factorial(i) / factorial(i - deriv) * tau ** (i - deriv)
    return row


def _snap_gram(order_poly: int) -> np.ndarray:
    """Gram matrix of integrated squared 4th derivative over tau in [0, 1]."""
    n = order_poly + 1
    g = np.zeros((n, n))
    for i in range(4, n):
        ci = factorial(i) / factorial(i - 4)
        for j in range(4, n):
            cj = factorial(j) / factorial(j - 4)
            g[i, j] = ci * cj / (i + j - 7)
    return g


def fit_trajectory(
    wp: Waypoints, v_ref: float, a_ref: float, order: int = 12
) -> PolyTrajectory:
    """Minimum-snap polynomial through the waypoints.

    Raises DegenerateWaypointsError when all consecutive waypoints are
    closer than the duplicate threshold; a single near-duplicate segment
    gets the duration floor instead.
    """
    if v_ref <= 0 or a_ref <= 0:
        raise ValueError("v_ref and a_ref must be positive")
    if order < 9:
        raise ValueError("snap optimization with end constraints needs order >= 9")
    pts = wp.points
    seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.all(seg_len < _NEAR_DUPLICATE):
        raise DegenerateWaypointsError("all waypoints coincide")
    durations = allocate_durations(pts, v_ref, a_ref)
    n_seg = len(wp) - 1
    n = order + 1
    nvar = n_seg * n

    # cost: sum over segments of (1/T^7) c' G c in normalized time
    gram = _snap_gram(order)
    h = np.zeros((nvar, nvar))
    for s in range(n_seg):
        sl = slice(s * n, (s + 1) * n)
        h[sl, sl] = gram / durations[s] ** 7

    rows, rhs_cols = [], []

    def add(row_parts, value_per_axis):
        row = np.zeros(nvar)
        for s, r in row_parts:
            row[s * n : (s + 1) * n] += r
        rows.append(row)
        rhs_cols.append(value_per_axis)

    for s in range(n_seg):
        add([(s, _derivative_row(order, 0, 0.0))], pts[s])
        add([(s, _derivative_row(order, 0, 1.0))], pts[s + 1])
    # derivative continuity (time derivatives 1..4) at interior junctions
    for s in range(n_seg - 1):
        for m in range(1, 5):
            left = _derivative_row(order, m, 1.0) / durations[s] ** m
            right = -_derivative_row(order, m, 0.0) / durations[s + 1] ** m
            add([(s, left), (s + 1, right)], np.zeros(3))
    # rest-to-rest end conditions
    for m in (1, 2):
        add([(0, _derivative_row(order, m, 0.0) / durations[0] ** m)], np.zeros(3))
        add(
            [(n_seg - 1, _derivative_row(order, m, 1.0) / durations[-1] ** m)],
            np.zeros(3),
        )

    a_mat = np.array(rows)
    b_mat = np.array(rhs_cols)  # (n_con, 3)
    n_con = a_mat.shape[0]

    kkt = np.zeros((nvar + n_con, nvar + n_con))
    kkt[:nvar, :nvar] = 2.0 * h
    kkt[:nvar, nvar:] = a_mat.T
    kkt[nvar:, :nvar] = a_mat
    rhs = np.zeros((nvar + n_con, 3))
    rhs[nvar:] = b_mat
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    coeffs = sol[:nvar].reshape(n_seg, n, 3)
    return PolyTrajectory(coeffs=coeffs, durations=durations)


def fit_piecewise_linear(wp: Waypoints, v_ref: float) -> PolyTrajectory:
    """Constant-speed straight segments behind the PolyTrajectory interface."""
    if v_ref <= 0:
        raise ValueError("v_ref must be positive")
    pts = wp.points
    seg = np.diff(pts, axis=0)
    durations = np.maximum(
        np.linalg.norm(seg, axis=1) / v_ref, DURATION_FLOOR
    )
    n_seg = len(wp) - 1
    coeffs = np.zeros((n_seg, 2, 3))
    coeffs[:, 0, :] = pts[:-1]
    coeffs[:, 1, :] = seg
    return PolyTrajectory(coeffs=coeffs, durations=durations)


def sample_sites(
    traj: PolyTrajectory, sensor_rate: float, t0: float = 0.0
) -> MeasurementSites:
    """Measurement sites at t0, t0 + 1/rate, ... within the trajectory."""
    if sensor_rate <= 0:
        raise ValueError("sensor_rate must be positive")
    dt = 1.0 / sensor_rate
    times = np.arange(t0, traj.total_duration + 1e-12, dt)
    if times.size == 0:
        times = np.array([t0])
    return MeasurementSites(times=times, positions=traj.positions(times))


def trajectory_cost(traj: PolyTrajectory) -> float:
    """Traversal time of the trajectory (the budgeted resource)."""
    return traj.total_duration
