"""Benchmark harness: run a tracker over a scenario under an odometry mode.

Modes reproduce the robustness protocol:

* ``baseline``   - use the scenario's stored odometry increments as-is.
* ``noodom``     - ignore odometry; each step starts from the previous solution.
* ``midnoise``   - add Gaussian noise (0.25 m per axis, 0.05 rad yaw) to
  the stored increments.
* ``largenoise`` - same with 0.5 m per axis and 0.1 rad yaw.

A run is flagged diverged when a step fails outright, produces a
non-finite pose, or lands more than DIVERGENCE_RADIUS from ground truth.
Per-scan times are taken strictly around the registration call; the
offline grid / index build is never included.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .distance_field import DfGrid
from .evaluation import BenchRow, estimate_rows, rmse_translation, rmse_yaw
from .formats import TrajectoryRow, TrajectorySource
from .geometry import Pose4, compose, tilt_compensate
from .nnsearch import KdTree3
from .registration import IcpOptions, RegistrationError, icp_register
from .solver import RobustLoss, SolverOptions
from .synth import NoiseSetup, ScenarioRun, corrupt_odometry
from .tracker import ScanFrame, TrackStepError, init_tracker, track_step

MODES = ("baseline", "noodom", "midnoise", "largenoise")
METHODS = ("dll", "icp")

MID_NOISE_SIGMA_T = 0.25
MID_NOISE_SIGMA_YAW = 0.05
LARGE_NOISE_SIGMA_T = 0.5
LARGE_NOISE_SIGMA_YAW = 0.1

# Translation error beyond which a run counts as diverged.
DIVERGENCE_RADIUS = 5.0


def mode_frames(scenario: ScenarioRun, mode: str, seed: int) -> tuple[ScanFrame, ...]:
    """Apply an odometry treatment to the scenario's frames."""
    if mode not in MODES:
        raise ValueError(f"unknown mode '{mode}' (expected one of {MODES})")
    frames = scenario.frames
    if mode == "baseline":
        return frames
    if mode == "noodom":
        return tuple(replace(f, odom=None) for f in frames)
    if mode == "midnoise":
        setup = NoiseSetup(MID_NOISE_SIGMA_T, MID_NOISE_SIGMA_YAW, seed)
    else:
        setup = NoiseSetup(LARGE_NOISE_SIGMA_T, LARGE_NOISE_SIGMA_YAW, seed)
    noisy = corrupt_odometry([f.odom for f in frames], setup)
    return tuple(replace(f, odom=d) for f, d in zip(frames, noisy))


@dataclass(frozen=True)
class TrackingRun:
    """Outcome of tracking one scenario under one method and mode."""

    method: str
    mode: str
    rows: list[TrajectoryRow]
    step_times: np.ndarray
    diverged: bool
    divergence_step: int | None


def _gt_rows(scenario: ScenarioRun) -> list[TrajectoryRow]:
    return [
        TrajectoryRow(f.timestamp, p.tx, p.ty, p.tz, 0.0, 0.0, p.yaw, TrajectorySource.GROUND_TRUTH)
        for p, f in zip(scenario.ground_truth, scenario.frames)
    ]


def _diverged_pose(pose: Pose4, truth: Pose4) -> bool:
    err = np.linalg.norm(pose.translation - truth.translation)
    return not np.isfinite(pose.as_array()).all() or err > DIVERGENCE_RADIUS


def run_tracking(
    scenario: ScenarioRun,
    method: str,
    mode: str,
    grid: DfGrid | None = None,
    map_index: KdTree3 | None = None,
    loss: RobustLoss = RobustLoss(),
    solver_opts: SolverOptions = SolverOptions(),
    icp_opts: IcpOptions = IcpOptions(),
    seed: int = 0,
) -> TrackingRun:
    """Track every frame of a scenario; returns estimates, timings, divergence.

    The tracker starts from the true initial pose. ``grid`` is required
    for the field method, ``map_index`` for the ICP baseline.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}' (expected one of {METHODS})")
    if method == "dll" and grid is None:
        raise ValueError("the field method needs a distance-field grid")
    if method == "icp" and map_index is None:
        raise ValueError("the icp baseline needs a map index")
    frames = mode_frames(scenario, mode, seed)
    timestamps = [f.timestamp for f in frames]
    attitudes = [f.attitude for f in frames]
    poses: list[Pose4] = []
    times: list[float] = []
    diverged = False
    divergence_step: int | None = None

    if method == "dll":
        state = init_tracker(scenario.ground_truth[0])
        for k, frame in enumerate(frames):
            try:
                state = track_step(state, frame, grid, loss, solver_opts)
            except TrackStepError:
                diverged, divergence_step = True, k
                break
            poses.append(state.current_pose)
            times.append(state.last_result.elapsed)
            if _diverged_pose(state.current_pose, scenario.ground_truth[k]):
                diverged, divergence_step = True, k
                break
    else:
        pose = scenario.ground_truth[0]
        for k, frame in enumerate(frames):
            guess = compose(pose, frame.odom) if frame.odom is not None else pose
            body = tilt_compensate(frame.cloud, frame.attitude)
            try:
                result = icp_register(body, map_index, guess, icp_opts)
            except (RegistrationError, ValueError):
                diverged, divergence_step = True, k
                break
            pose = result.pose
            poses.append(pose)
            times.append(result.elapsed)
            if _diverged_pose(pose, scenario.ground_truth[k]):
                diverged, divergence_step = True, k
                break

    rows = estimate_rows(timestamps[: len(poses)], poses, attitudes[: len(poses)])
    return TrackingRun(method, mode, rows, np.array(times), diverged, divergence_step)


def bench_row(run: TrackingRun, scenario: ScenarioRun) -> BenchRow:
    """Summarize a tracking run against the scenario's ground truth."""
    dt_mean = float(run.step_times.mean()) if run.step_times.size else None
    dt_dev = float(run.step_times.std()) if run.step_times.size else None
    if run.diverged:
        return BenchRow(run.method, run.mode, None, None, None, None, dt_mean, dt_dev, True)
    gt = _gt_rows(scenario)
    rt, rt_dev = rmse_translation(run.rows, gt)
    ra, ra_dev = rmse_yaw(run.rows, gt)
    return BenchRow(run.method, run.mode, rt, rt_dev, ra, ra_dev, dt_mean, dt_dev, False)


def run_benchmark(
    scenario: ScenarioRun,
    grid: DfGrid,
    map_index: KdTree3,
    loss: RobustLoss = RobustLoss(),
    solver_opts: SolverOptions = SolverOptions(),
    icp_opts: IcpOptions = IcpOptions(),
    seed: int = 0,
    parallel: bool = False,
) -> list[BenchRow]:
    """Run every method under every odometry mode and summarize each.

    With ``parallel`` the independent (method, mode) runs execute on a
    thread pool; results are identical but the timing columns lose
    comparability, so leave it off when measuring.
    """
    combos = [(m, mode) for m in METHODS for mode in MODES]

    def one(combo):
        method, mode = combo
        run = run_tracking(
            scenario,
            method,
            mode,
            grid=grid,
            map_index=map_index,
            loss=loss,
            solver_opts=solver_opts,
            icp_opts=icp_opts,
            seed=seed,
        )
        return bench_row(run, scenario)

    if parallel:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=4) as pool:
            return list(pool.map(one, combos))
    return [one(c) for c in combos]
