"""Experiment harness: config parsing, seeded trials, CSV emission.

Configs are flat key-value text files with dotted section keys
(``world.extent = 2 2 2``); unknown keys are errors. Trial i draws its
environment (field and landmarks) and its noise streams from seed
``base_seed + i``; the streams are separated by the documented constants
below so changing the planner never changes the environment. Trials run in
a thread pool capped by ``AMAP_THREADS``; rows are buffered per trial and
written in trial order, so the CSV bytes do not depend on the pool size.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .kernels import Hyperparams, KernelFamily, KernelSpec
from .planner import (
    CmaesSettings,
    Lattice,
    MissionEnv,
    PlannerConfig,
    Workspace,
    run_mission,
)
from .pose_graph import CameraModel, ControlNoiseModel
from .quadrature import gauss_hermite_rule
from .sim_env import WorldConfig, generate_grf, place_landmarks
from .utility import UtilityKind, UtilityVariant

__all__ = [
    "ParseError",
    "ValidationError",
    "SchemaMismatchError",
    "TrialFailureError",
    "ExperimentConfig",
    "RunResult",
    "SummaryRow",
    "parse_config",
    "run_experiment",
    "summarize",
    "write_summary",
    "save_field_dump",
    "load_field_dump",
    "save_trajectory_dump",
    "load_trajectory_dump",
    "CSV_HEADER",
    "ENV_STREAM",
    "LANDMARK_STREAM",
]

log = logging.getLogger(__name__)

# stream-separation constants: the environment (field, landmarks) and the
# in-mission noise streams are all derived from the trial seed but never
# share a generator
ENV_STREAM = 0xE17
LANDMARK_STREAM = 0x1A9

CSV_HEADER = (
    "trial_id,env_seed,time,tr_P,map_rmse,tr_Sigma,pose_err,"
    "planner,utility,mapping_mode"
)

_FAILURE_THRESHOLD = 0.10  # fraction of failed trials tolerated

_PLANNERS = ("two_step", "rig_tree", "random")
_MAPPING_MODES = ("plain", "expected")
_TRAJ_BACKENDS = ("minsnap", "linear")

# key -> (type tag, default); types: float, int, str, vec2, vec3, ivec3
_SCHEMA = {
    "world.origin": ("vec3", (0.0, 0.0, 0.0)),
    "world.extent": ("vec3", (5.0, 5.0, 4.0)),
    "world.grid_resolution": ("vec3", (0.25, 0.25, 1.0)),
    "world.landmark_count": ("int", 10),
    "world.sensor_rate_hz": ("float", 0.25),
    "world.start": ("vec3", (2.0, 2.0, 1.0)),
    "world.budget_s": ("float", 150.0),
    "kernel.family": ("str", "squared_exponential"),
    "kernel.signal_variance": ("float", 1.0),
    "kernel.length_scale": ("float", 0.6),
    "kernel.noise_variance": ("float", 0.01),
    "mapping.mode": ("str", "expected"),
    "mapping.quadrature_order": ("int", 5),
    "mapping.prior_mean": ("float", 0.0),
    "planner.type": ("str", "two_step"),
    "planner.n_waypoints": ("int", 3),
    "planner.lattice_shape": ("ivec3", (3, 3, 3)),
    "planner.v_ref": ("float", 0.5),
    "planner.a_ref": ("float", 0.5),
    "planner.traj_backend": ("str", "minsnap"),
    "planner.traj_order": ("int", 12),
    "planner.interp_hz": ("float", 0.5),
    "planner.rig_step": ("float", 1.0),
    "planner.rig_iterations": ("int", 30),
    "planner.cmaes_sigma0": ("float", 0.25),
    "planner.cmaes_max_evals": ("int", 60),
    "utility.variant": ("str", "renyi_coupled"),
    "utility.w_map": ("float", 0.5),
    "utility.w_pose": ("float", 0.5),
    "camera.fov_deg": ("vec2", (47.9, 36.9)),
    "camera.pixel_sigma": ("float", 1.0),
    "camera.depth_sigma": ("float", 0.1),
    "noise.control_coefficient": ("float", 0.01),
    "noise.anchor_sigma": ("float", 0.05),
    "experiment.trials": ("int", 1),
    "experiment.base_seed": ("int", 0),
    "experiment.out_dir": ("str", "results"),
    "experiment.label": ("str", ""),
}


class ParseError(ValueError):
    """Malformed config line or unknown key (with line diagnostics)."""


class ValidationError(ValueError):
    """Semantically invalid config; the message lists all violations."""


class SchemaMismatchError(ValueError):
    """CSV files with incompatible headers."""


class TrialFailureError(RuntimeError):
    """More than the tolerated fraction of trials failed."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def _parse_value(kind: str, raw: str):
    parts = raw.split()
    if kind == "float":
        (v,) = parts
        return float(v)
    if kind == "int":
        (v,) = parts
        return int(v)
    if kind == "str":
        return raw.strip()
    if kind == "vec2":
        a, b = parts
        return (float(a), float(b))
    if kind == "vec3":
        a, b, c = parts
        return (float(a), float(b), float(c))
    if kind == "ivec3":
        a, b, c = parts
        return (int(a), int(b), int(c))
    raise AssertionError(kind)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description."""

    world: WorldConfig
    spec: KernelSpec
    mapping_mode: str
    quadrature_order: int
    prior_mean: float
    planner: str
    utility: UtilityKind
    utility_name: str
    cam: CameraModel
    control_noise: ControlNoiseModel
    anchor_sigma: float
    n_waypoints: int
    lattice_shape: tuple
    v_ref: float
    a_ref: float
    traj_backend: str
    traj_order: int
    interp_hz: float
    rig_step: float
    rig_iterations: int
    cmaes_sigma0: float
    cmaes_max_evals: int
    trials: int
    base_seed: int
    out_dir: str
    label: str
    resolved: tuple  # ((key, value-string), ...) for the manifest

    def planner_config(self) -> PlannerConfig:
        ws = Workspace(self.world.origin, self.world.origin + self.world.extent)
        return PlannerConfig(
            n_waypoints=self.n_waypoints,
            lattice=Lattice.uniform(ws, self.lattice_shape),
            workspace=ws,
            utility=self.utility,
            cmaes=CmaesSettings(
                sigma0=self.cmaes_sigma0, max_evals=self.cmaes_max_evals
            ),
            v_ref=self.v_ref,
            a_ref=self.a_ref,
            sensor_rate_hz=self.world.sensor_rate_hz,
            interp_hz=self.interp_hz,
            traj_backend=self.traj_backend,
            traj_order=self.traj_order,
            rig_step=self.rig_step,
            rig_iterations=self.rig_iterations,
        )

    def mission_env(self, trial_seed: int) -> MissionEnv:
        fld = generate_grf(
            self.world.make_grid(), self.spec, seed=[trial_seed, ENV_STREAM]
        )
        landmarks = place_landmarks(
            self.world, seed=[trial_seed, ENV_STREAM, LANDMARK_STREAM]
        )
        return MissionEnv(
            world=self.world,
            fld=fld,
            landmarks=landmarks,
            cam=self.cam,
            control_noise=self.control_noise,
            spec=self.spec,
            rule=gauss_hermite_rule(self.quadrature_order),
            mapping_mode=self.mapping_mode,
            anchor_sigma=self.anchor_sigma,
            prior_mean=self.prior_mean,
        )


def _read_pairs(path) -> dict:
    values = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _SCHEMA:
            raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
        kind, _ = _SCHEMA[key]
        try:
            values[key] = _parse_value(kind, raw)
        except (ValueError, AssertionError) as exc:
            raise ParseError(
                f"{path}:{lineno}: bad value for {key!r} (expected {kind}): {raw!r}"
            ) from exc
    return values


def build_config(values: dict) -> ExperimentConfig:
    """Validate raw key-value pairs and assemble the experiment config.

    All violations are collected and reported in one ValidationError.
    """
    v = {key: values.get(key, default) for key, (_, default) in _SCHEMA.items()}
    problems = []

    def check(cond, msg):
        if not cond:
            problems.append(msg)

    check(v["world.budget_s"] > 0, "world.budget_s (budget) must be positive")
    check(all(e > 0 for e in v["world.extent"]), "world.extent must be positive")
    check(
        all(r > 0 for r in v["world.grid_resolution"]),
        "world.grid_resolution must be positive",
    )
    check(v["world.landmark_count"] >= 0, "world.landmark_count must be >= 0")
    check(v["world.sensor_rate_hz"] > 0, "world.sensor_rate_hz must be positive")
    check(v["kernel.signal_variance"] > 0, "kernel.signal_variance must be positive")
    check(v["kernel.length_scale"] > 0, "kernel.length_scale must be positive")
    check(v["kernel.noise_variance"] > 0, "kernel.noise_variance must be positive")
    families = [f.value for f in KernelFamily]
    check(v["kernel.family"] in families, f"kernel.family must be one of {families}")
    check(
        v["mapping.mode"] in _MAPPING_MODES,
        f"mapping.mode must be one of {_MAPPING_MODES}",
    )
    check(
        1 <= v["mapping.quadrature_order"] <= 20,
        "mapping.quadrature_order must be in [1, 20]",
    )
    check(v["planner.type"] in _PLANNERS, f"planner.type must be one of {_PLANNERS}")
    check(v["planner.n_waypoints"] >= 2, "planner.n_waypoints must be >= 2")
    check(
        all(s >= 1 for s in v["planner.lattice_shape"]),
        "planner.lattice_shape entries must be >= 1",
    )
    check(v["planner.v_ref"] > 0, "planner.v_ref must be positive")
    check(v["planner.a_ref"] > 0, "planner.a_ref must be positive")
    check(
        v["planner.traj_backend"] in _TRAJ_BACKENDS,
        f"planner.traj_backend must be one of {_TRAJ_BACKENDS}",
    )
    check(v["planner.interp_hz"] > 0, "planner.interp_hz must be positive")
    check(v["planner.rig_step"] > 0, "planner.rig_step must be positive")
    check(v["planner.rig_iterations"] >= 1, "planner.rig_iterations must be >= 1")
    check(v["planner.cmaes_sigma0"] > 0, "planner.cmaes_sigma0 must be positive")
    check(v["planner.cmaes_max_evals"] >= 0, "planner.cmaes_max_evals must be >= 0")
    variants = [u.value for u in UtilityVariant]
    check(
        v["utility.variant"] in variants, f"utility.variant must be one of {variants}"
    )
    check(v["utility.w_map"] >= 0, "utility.w_map must be >= 0")
    check(v["utility.w_pose"] >= 0, "utility.w_pose must be >= 0")
    check(v["camera.pixel_sigma"] > 0, "camera.pixel_sigma must be positive")
    check(v["camera.depth_sigma"] > 0, "camera.depth_sigma must be positive")
    check(
        v["noise.control_coefficient"] >= 0,
        "noise.control_coefficient must be >= 0",
    )
    check(v["noise.anchor_sigma"] > 0, "noise.anchor_sigma must be positive")
    check(v["experiment.trials"] >= 1, "experiment.trials must be >= 1")

    world = None
    if not problems:
        try:
            world = WorldConfig(
                origin=v["world.origin"],
                extent=v["world.extent"],
                grid_resolution=v["world.grid_resolution"],
                landmark_count=v["world.landmark_count"],
                sensor_rate_hz=v["world.sensor_rate_hz"],
                start=v["world.start"],
                budget_s=v["world.budget_s"],
            )
        except ValueError as exc:
            problems.append(str(exc))
    if problems:
        raise ValidationError("invalid config:\n  - " + "\n  - ".join(problems))

    label = v["experiment.label"] or "_".join(
        (v["planner.type"], v["utility.variant"], v["mapping.mode"])
    )
    resolved = tuple(
        (key, _format_value(v[key])) for key in sorted(_SCHEMA)
        if key != "experiment.label"
    ) + (("experiment.label", label),)

    return ExperimentConfig(
        world=world,
        spec=KernelSpec(
            KernelFamily(v["kernel.family"]),
            Hyperparams(
                v["kernel.signal_variance"],
                v["kernel.length_scale"],
                v["kernel.noise_variance"],
            ),
        ),
        mapping_mode=v["mapping.mode"],
        quadrature_order=v["mapping.quadrature_order"],
        prior_mean=v["mapping.prior_mean"],
        planner=v["planner.type"],
        utility=UtilityKind(
            UtilityVariant(v["utility.variant"]),
            w_map=v["utility.w_map"],
            w_pose=v["utility.w_pose"],
        ),
        utility_name=v["utility.variant"],
        cam=CameraModel(
            fov_deg=v["camera.fov_deg"],
            pixel_sigma=v["camera.pixel_sigma"],
            depth_sigma=v["camera.depth_sigma"],
        ),
        control_noise=ControlNoiseModel(v["noise.control_coefficient"]),
        anchor_sigma=v["noise.anchor_sigma"],
        n_waypoints=v["planner.n_waypoints"],
        lattice_shape=v["planner.lattice_shape"],
        v_ref=v["planner.v_ref"],
        a_ref=v["planner.a_ref"],
        traj_backend=v["planner.traj_backend"],
        traj_order=v["planner.traj_order"],
        interp_hz=v["planner.interp_hz"],
        rig_step=v["planner.rig_step"],
        rig_iterations=v["planner.rig_iterations"],
        cmaes_sigma0=v["planner.cmaes_sigma0"],
        cmaes_max_evals=v["planner.cmaes_max_evals"],
        trials=v["experiment.trials"],
        base_seed=v["experiment.base_seed"],
        out_dir=v["experiment.out_dir"],
        label=label,
        resolved=resolved,
    )


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return " ".join(_format_value(x) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a flat key-value config file.

    ``overrides`` maps schema keys to already-typed values (CLI flags).
    """
    values = _read_pairs(path)
    if overrides:
        for key, val in overrides.items():
            if key not in _SCHEMA:
                raise ParseError(f"unknown override key {key!r}")
            values[key] = val
    return build_config(values)


def thread_count(trials: int) -> int:
    cap = os.environ.get("AMAP_THREADS", "")
    if cap:
        return max(1, min(int(cap), trials))
    return max(1, min(os.cpu_count() or 1, trials))


@dataclass(frozen=True)
class RunResult:
    csv_path: Path
    manifest_path: Path
    n_trials: int
    n_failed: int
    failed_trials: tuple


def _run_trial(cfg: ExperimentConfig, i: int, artifacts: dict | None):
    trial_seed = cfg.base_seed + i
    env = cfg.mission_env(trial_seed)
    rows = run_mission(
        env,
        cfg.planner,
        cfg.planner_config(),
        cfg.world.budget_s,
        trial_seed,
        artifacts=artifacts,
    )
    return trial_seed, env, rows


def run_experiment(cfg: ExperimentConfig, dump_artifacts: bool = True) -> RunResult:
    """Run all trials, write the CSV and manifest, return the result.

    Raises TrialFailureError (carrying the partial result) when more than
    10% of the trials fail; the CSV of successful trials is still written.
    """
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {} if dump_artifacts else None

    results: list = [None] * cfg.trials
    errors: list = [None] * cfg.trials

    def worker(i: int):
        try:
            results[i] = _run_trial(cfg, i, artifacts if i == 0 else None)
        except Exception as exc:  # failed trials are logged and skipped
            log.warning("trial %d failed: %s", i, exc)
            errors[i] = exc

    n_threads = thread_count(cfg.trials)
    if n_threads == 1:
        for i in range(cfg.trials):
            worker(i)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(worker, range(cfg.trials)))

    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for i in range(cfg.trials):
        if results[i] is None:
            continue
        trial_seed, _, rows = results[i]
        for r in rows:
            buf.write(
                f"{i},{trial_seed},{r.time!r},{r.tr_p!r},{r.map_rmse!r},"
                f"{r.tr_sigma!r},{r.pose_err!r},"
                f"{cfg.planner},{cfg.utility_name},{cfg.mapping_mode}\n"
            )

    csv_path = out_dir / f"{cfg.label}.csv"
    csv_path.write_bytes(buf.getvalue().encode())

    manifest_path = out_dir / f"{cfg.label}.manifest.txt"
    manifest_lines = [f"artifact_version = {__version__}"] + [
        f"{key} = {val}" for key, val in cfg.resolved
    ]
    manifest_path.write_text("\n".join(manifest_lines) + "\n")

    if dump_artifacts and results[0] is not None:
        _, env0, _ = results[0]
        save_field_dump(out_dir / f"{cfg.label}_truth.npz", env0.fld.grid,
                        env0.fld.values)
        if "posterior_mean" in artifacts:
            save_field_dump(
                out_dir / f"{cfg.label}_posterior.npz",
                env0.fld.grid,
                artifacts["posterior_mean"],
            )
            save_trajectory_dump(
                out_dir / f"{cfg.label}_trajectory.npz",
                artifacts["times"],
                artifacts["est_positions"],
                artifacts["true_positions"],
            )

    failed = tuple(i for i in range(cfg.trials) if errors[i] is not None)
    result = RunResult(
        csv_path=csv_path,
        manifest_path=manifest_path,
        n_trials=cfg.trials,
        n_failed=len(failed),
        failed_trials=failed,
    )
    if len(failed) > _FAILURE_THRESHOLD * cfg.trials:
        raise TrialFailureError(
            f"{len(failed)}/{cfg.trials} trials failed "
            f"(tolerated: {_FAILURE_THRESHOLD:.0%})",
            result=result,
        )
    return result


# --- summaries ---------------------------------------------------------------

_METRICS = ("tr_P", "map_rmse", "tr_Sigma", "pose_err")


@dataclass(frozen=True)
class SummaryRow:
    planner: str
    utility: str
    mapping_mode: str
    time_bin: float
    n: int
    means: tuple  # per _METRICS
    ci95: tuple  # 1.96 * sd / sqrt(n); 0 when n = 1


def _read_events(paths):
    """(group, trial key) -> sorted list of (time, metric values)."""
    expected = CSV_HEADER.split(",")
    events: dict = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected:
                raise SchemaMismatchError(
                    f"{path}: header {header} != expected {expected}"
                )
            for row in reader:
                rec = dict(zip(expected, row))
                group = (rec["planner"], rec["utility"], rec["mapping_mode"])
                trial = (str(path), rec["trial_id"])
                vals = tuple(float(rec[m]) for m in _METRICS)
                events.setdefault(group, {}).setdefault(trial, []).append(
                    (float(rec["time"]), vals)
                )
    for trials in events.values():
        for series in trials.values():
            series.sort(key=lambda tv: tv[0])
    return events


def summarize(paths, bin_width: float = 1.0) -> list[SummaryRow]:
    """Per-configuration mean and 95% CI at aligned time bins.

    Each trial contributes its measurement event nearest to the bin time.
    """
    events = _read_events(paths)
    out = []
    for group in sorted(events):
        trials = events[group]
        t_max = max(series[-1][0] for series in trials.values())
        n_bins = int(np.floor(t_max / bin_width + 1e-9)) + 1
        for b in range(n_bins):
            t_bin = b * bin_width
            samples = []
            for series in trials.values():
                times = np.array([t for t, _ in series])
                nearest = int(np.argmin(np.abs(times - t_bin)))
                samples.append(series[nearest][1])
            arr = np.array(samples)  # (n, len(_METRICS))
            n = arr.shape[0]
            means = tuple(float(m) for m in arr.mean(axis=0))
            if n > 1:
                sd = arr.std(axis=0, ddof=1)
                ci = tuple(float(c) for c in 1.96 * sd / np.sqrt(n))
            else:
                ci = (0.0,) * len(_METRICS)
            out.append(
                SummaryRow(
                    planner=group[0],
                    utility=group[1],
                    mapping_mode=group[2],
                    time_bin=t_bin,
                    n=n,
                    means=means,
                    ci95=ci,
                )
            )
    return out


def write_summary(rows, stream=None) -> str:
    """Format summary rows as CSV; write to the stream when given."""
    cols = ["planner", "utility", "mapping_mode", "time_bin", "n"]
    for m in _METRICS:
        cols += [f"{m}_mean", f"{m}_ci95"]
    lines = [",".join(cols)]
    for r in rows:
        parts = [r.planner, r.utility, r.mapping_mode, repr(r.time_bin), str(r.n)]
        for mean, ci in zip(r.means, r.ci95):
            parts += [repr(mean), repr(ci)]
        lines.append(",".join(parts))
    text = "\n".join(lines) + "\n"
    if stream is not None:
        stream.write(text)
    return text


# --- field / trajectory dumps ------------------------------------------------


def save_field_dump(path, grid, values) -> None:
    """Scalar field over a regular grid as an npz archive."""
    np.savez(
        path,
        origin=np.asarray(grid.origin, float),
        resolution=np.asarray(grid.resolution, float),
        shape=np.asarray(grid.shape, int),
        values=np.asarray(values, float),
    )


def load_field_dump(path) -> dict:
    with np.load(path) as data:
        return {key: data[key].copy() for key in data.files}


def save_trajectory_dump(path, times, est_positions, true_positions) -> None:
    np.savez(
        path,
        times=np.asarray(times, float),
        est_positions=np.asarray(est_positions, float),
        true_positions=np.asarray(true_positions, float),
    )


def load_trajectory_dump(path) -> dict:
    with np.load(path) as data:
        return {key: data[key].copy() for key in data.files}
