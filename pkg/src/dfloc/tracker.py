"""Sequential pose tracking: predict with odometry, compensate tilt, refine.

Each step composes the previous estimate with the body-frame odometry
increment (or reuses the previous estimate when no odometry is
available), tilt-compensates the sensor cloud with the frame's IMU
attitude, and refines against the distance field. A tracker is a
sequential state machine; distinct trackers over the same grid may run
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

from .distance_field import DfGrid
from .geometry import Attitude, OdomDelta, PointCloud, Pose4, compose, tilt_compensate
from .registration import RegistrationError, RegistrationResult, dll_register
from .solver import RobustLoss, SolverOptions


@dataclass(frozen=True)
class ScanFrame:
    """One tracking input: sensor cloud, IMU attitude, odometry increment.

    odom is None when no odometry is available for the step; the tracker
    then falls back to the previous solution as its initial guess.
    """

    cloud: PointCloud
    attitude: Attitude
    odom: OdomDelta | None
    timestamp: float


@dataclass(frozen=True)
class TrackerState:
    current_pose: Pose4
    last_result: RegistrationResult | None
    step_index: int


class TrackStepError(RuntimeError):
    """A tracking step failed; carries the step index for the caller's recovery policy."""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"tracking step {step_index} failed: {cause}")
        self.step_index = step_index


def init_tracker(initial_pose: Pose4) -> TrackerState:
    """Start (or restart) tracking from a known pose at step 0."""
    return TrackerState(initial_pose, None, 0)


def track_step(
    state: TrackerState,
    frame: ScanFrame,
    grid: DfGrid,
    loss: RobustLoss = RobustLoss(),
    opts: SolverOptions = SolverOptions(),
) -> TrackerState:
    """Advance the tracker by one frame and return the new state.

    On registration failure the previous state is left untouched and a
    TrackStepError is raised; holding the last pose (rather than silent
    dead reckoning) keeps degradation explicit.
    """
    if frame.odom is not None:
        guess = compose(state.current_pose, frame.odom)
    else:
        guess = state.current_pose
    body = tilt_compensate(frame.cloud, frame.attitude)
    try:
        result = dll_register(body, grid, guess, loss, opts)
    except (RegistrationError, ValueError) as exc:
        raise TrackStepError(state.step_index, exc) from exc
    return TrackerState(result.pose, result, state.step_index + 1)
