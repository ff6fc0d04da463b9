"""File formats: point clouds, trajectory CSV, run configuration, scenario bundles.

All layouts are documented byte-for-byte in FORMATS.md. Loads are
all-or-nothing: a malformed input raises before any partially built
object escapes. Distance-field grid persistence lives in
``distance_field`` (save_grid / load_grid).
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Attitude, Frame, OdomDelta, PointCloud, Pose4, wrap_angle
from .registration import IcpOptions
from .solver import LossKind, RobustLoss, SolverOptions
from .synth import NoiseSetup, ScanModel, Scene, ScenarioRun
from .tracker import ScanFrame

CLOUD_MAGIC = b"XYZCLD1\n"


class CloudFormatError(ValueError):
    """Malformed point-cloud file."""


class CloudParseError(CloudFormatError):
    """A text line did not parse as three numbers."""


class CloudValueError(CloudFormatError):
    """A parsed coordinate was NaN or infinite."""


class EmptyCloudError(CloudFormatError):
    """The file contains no points."""


class TrajectoryFormatError(ValueError):
    """Malformed trajectory CSV."""


class ConfigError(ValueError):
    """Invalid run-configuration file; the message names the offending key."""


class ScenarioFormatError(ValueError):
    """Malformed scenario bundle."""


def read_cloud(path, frame: Frame = Frame.MAP) -> PointCloud:
    """Load a point cloud from ASCII XYZ or the binary cloud format.

    The binary variant is detected by its magic bytes; anything else is
    parsed as text with one ``x y z`` triple per line and ``#`` comments.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(CLOUD_MAGIC)] == CLOUD_MAGIC:
        return _read_cloud_binary(raw, path, frame)
    return _read_cloud_text(raw, path, frame)


def _read_cloud_binary(raw: bytes, path: Path, frame: Frame) -> PointCloud:
    header_size = len(CLOUD_MAGIC) + 8
    if len(raw) < header_size:
        raise CloudFormatError(f"{path}: binary cloud header truncated")
    (count,) = struct.unpack_from("<Q", raw, len(CLOUD_MAGIC))
    if count == 0:
        raise EmptyCloudError(f"{path}: cloud contains no points")
    expected = header_size + 12 * count
    if len(raw) != expected:
        raise CloudFormatError(f"{path}: file is {len(raw)} bytes, header implies {expected}")
    pts = np.frombuffer(raw, dtype="<f4", offset=header_size).reshape(count, 3)
    if not np.isfinite(pts).all():
        raise CloudValueError(f"{path}: binary cloud contains non-finite coordinates")
    return PointCloud(pts.astype(np.float64), frame)


def _read_cloud_text(raw: bytes, path: Path, frame: Frame) -> PointCloud:
    rows = []
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 3:
            raise CloudParseError(f"{path}: line {lineno}: expected 'x y z', got {len(parts)} fields")
        try:
            xyz = [float(v) for v in parts]
        except ValueError:
            raise CloudParseError(f"{path}: line {lineno}: not a numeric triple: '{body}'") from None
        if not all(math.isfinite(v) for v in xyz):
            raise CloudValueError(f"{path}: line {lineno}: non-finite coordinate")
        rows.append(xyz)
    if not rows:
        raise EmptyCloudError(f"{path}: cloud contains no points")
    return PointCloud(np.array(rows), frame)


def write_cloud(cloud: PointCloud, path, binary: bool = False) -> None:
    """Write a cloud as ASCII XYZ, or as the f32 binary format when ``binary``."""
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(CLOUD_MAGIC)
            fh.write(struct.pack("<Q", len(cloud)))
            cloud.points.astype("<f4").tofile(fh)
        return
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


class TrajectorySource(enum.Enum):
    GROUND_TRUTH = "ground_truth"
    ODOMETRY = "odometry"
    ESTIMATE = "estimate"


@dataclass(frozen=True)
class TrajectoryRow:
    """One timestamped pose sample with full orientation and provenance tag."""

    timestamp: float
    tx: float
    ty: float
    tz: float
    roll: float
    pitch: float
    yaw: float
    source: TrajectorySource

    def __post_init__(self):
        vals = (self.timestamp, self.tx, self.ty, self.tz, self.roll, self.pitch, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("trajectory row contains non-finite values")
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))
        if not isinstance(self.source, TrajectorySource):
            object.__setattr__(self, "source", TrajectorySource(self.source))

    def pose(self) -> Pose4:
        return Pose4(self.tx, self.ty, self.tz, self.yaw)


TRAJECTORY_HEADER = "t,tx,ty,tz,roll,pitch,yaw,source"


def write_trajectory(rows, path) -> None:
    """Write trajectory rows as CSV; values round-trip to better than 1e-9."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.timestamp:.12g},{r.tx:.12g},{r.ty:.12g},{r.tz:.12g},"
                f"{r.roll:.12g},{r.pitch:.12g},{r.yaw:.12g},{r.source.value}\n"
            )


def read_trajectory(path) -> list[TrajectoryRow]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != TRAJECTORY_HEADER:
        got = lines[0].strip() if lines else "<empty file>"
        raise TrajectoryFormatError(f"{path}: bad header '{got}' (expected '{TRAJECTORY_HEADER}')")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise TrajectoryFormatError(f"{path}: line {lineno}: expected 8 columns, got {len(parts)}")
        try:
            vals = [float(v) for v in parts[:7]]
        except ValueError:
            raise TrajectoryFormatError(f"{path}: line {lineno}: non-numeric field") from None
        token = parts[7].strip()
        try:
            source = TrajectorySource(token)
        except ValueError:
            raise TrajectoryFormatError(f"{path}: line {lineno}: unknown source '{token}'") from None
        try:
            rows.append(TrajectoryRow(*vals, source))
        except ValueError as exc:
            raise TrajectoryFormatError(f"{path}: line {lineno}: {exc}") from None
    return rows


# -- run configuration -------------------------------------------------------


@dataclass(frozen=True)
class GridOptions:
    resolution: float = 0.05
    margin: float = 1.0


@dataclass(frozen=True)
class SimOptions:
    """Scene / trajectory / scan generation parameters for `simulate`."""

    scene_kind: str = "box_room"
    extent: float = 10.0
    density: float = 100.0
    steps: int = 100
    step_length: float = 0.15
    scan: ScanModel = field(default_factory=ScanModel)
    frame_dt: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    map_path: str | None = None
    grid: GridOptions = field(default_factory=GridOptions)
    loss: RobustLoss = field(default_factory=RobustLoss)
    solver: SolverOptions = field(default_factory=SolverOptions)
    icp: IcpOptions = field(default_factory=IcpOptions)
    noise: NoiseSetup = field(default_factory=NoiseSetup)
    sim: SimOptions = field(default_factory=SimOptions)
    seed: int = 0


def _positive(v: float) -> bool:
    return v > 0.0


def _non_negative(v: float) -> bool:
    return v >= 0.0


def _fraction(v: float) -> bool:
    return 0.0 <= v <= 1.0


def _at_least_one(v: int) -> bool:
    return v >= 1


def _parse_int(text: str) -> int:
    return int(text, 0)


# key -> (parser, constraint, constraint description). Targets are filled
# into a flat dict and assembled into RunConfig afterwards.
_CONFIG_SCHEMA = {
    "map": (str, lambda v: True, ""),
    "grid.resolution": (float, _positive, "must be positive"),
    "grid.margin": (float, _non_negative, "must be non-negative"),
    "loss.kind": (str, lambda v: v in ("none", "cauchy"), "must be 'none' or 'cauchy'"),
    "loss.scale": (float, _positive, "must be positive"),
    "solver.max_iterations": (_parse_int, _at_least_one, "must be at least 1"),
    "solver.param_tolerance": (float, _positive, "must be positive"),
    "solver.cost_tolerance": (float, _positive, "must be positive"),
    "solver.initial_damping": (float, _positive, "must be positive"),
    "solver.damping_increase": (float, lambda v: v > 1.0, "must exceed 1"),
    "solver.damping_decrease": (float, lambda v: 0.0 < v < 1.0, "must lie in (0, 1)"),
    "icp.max_iterations": (_parse_int, _at_least_one, "must be at least 1"),
    "icp.max_correspondence_distance": (float, _positive, "must be positive"),
    "icp.outlier_rejection_threshold": (float, _positive, "must be positive"),
    "icp.convergence_epsilon": (float, _positive, "must be positive"),
    "noise.sigma_t": (float, _non_negative, "must be non-negative"),
    "noise.sigma_yaw": (float, _non_negative, "must be non-negative"),
    "scene.kind": (str, lambda v: v in ("box_room", "building_yard"), "must be 'box_room' or 'building_yard'"),
    "scene.extent": (float, _positive, "must be positive"),
    "scene.density": (float, _positive, "must be positive"),
    "trajectory.steps": (_parse_int, lambda v: v >= 2, "must be at least 2"),
    "trajectory.step_length": (float, _positive, "must be positive"),
    "trajectory.frame_dt": (float, _positive, "must be positive"),
    "scan.points": (_parse_int, _at_least_one, "must be at least 1"),
    "scan.max_range": (float, _positive, "must be positive"),
    "scan.noise_sigma": (float, _non_negative, "must be non-negative"),
    "scan.outlier_fraction": (float, _fraction, "must lie in [0, 1]"),
    "seed": (_parse_int, lambda v: True, ""),
}


def parse_keyvalues(text: str, path="<config>") -> dict[str, str]:
    """Parse flat ``key = value`` lines with '#' comments into a dict."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got '{body}'")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_dict(raw: dict[str, str], path="<config>") -> RunConfig:
    values: dict[str, object] = {}
    for key, text in raw.items():
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"{path}: unknown key '{key}'")
        parser, check, why = _CONFIG_SCHEMA[key]
        try:
            value = parser(text)
        except ValueError:
            raise ConfigError(f"{path}: key '{key}': cannot parse '{text}'") from None
        if not check(value):
            raise ConfigError(f"{path}: key '{key}': value {value!r} {why}")
        values[key] = value

    def take(key, default):
        return values.get(key, default)

    return RunConfig(
        map_path=take("map", None),
        grid=GridOptions(take("grid.resolution", 0.05), take("grid.margin", 1.0)),
        loss=RobustLoss(LossKind(take("loss.kind", "cauchy")), take("loss.scale", 0.1)),
        solver=SolverOptions(
            take("solver.max_iterations", 50),
            take("solver.param_tolerance", 1e-6),
            take("solver.cost_tolerance", 1e-8),
            take("solver.initial_damping", 1e-4),
            take("solver.damping_increase", 10.0),
            take("solver.damping_decrease", 0.5),
        ),
        icp=IcpOptions(
            take("icp.max_iterations", 50),
            take("icp.max_correspondence_distance", 0.1),
            take("icp.outlier_rejection_threshold", 1.0),
            take("icp.convergence_epsilon", 1e-9),
        ),
        noise=NoiseSetup(take("noise.sigma_t", 0.0), take("noise.sigma_yaw", 0.0)),
        sim=SimOptions(
            scene_kind=take("scene.kind", "box_room"),
            extent=take("scene.extent", 10.0),
            density=take("scene.density", 100.0),
            steps=take("trajectory.steps", 100),
            step_length=take("trajectory.step_length", 0.15),
            scan=ScanModel(
                take("scan.max_range", 15.0),
                take("scan.points", 2000),
                take("scan.noise_sigma", 0.02),
                take("scan.outlier_fraction", 0.0),
            ),
            frame_dt=take("trajectory.frame_dt", 0.1),
        ),
        seed=take("seed", 0),
    )


def load_config(path) -> RunConfig:
    """Load a run configuration; absent keys fall back to the documented defaults."""
    path = Path(path)
    return config_from_dict(parse_keyvalues(path.read_text(encoding="utf-8"), path), path)


# -- scenario bundles ---------------------------------------------------------

SCENARIO_META = "scenario.txt"
FRAMES_HEADER = "t,dtx,dty,dtz,dyaw,roll,pitch,scan"


def save_scenario(run: ScenarioRun, directory) -> None:
    """Write a scenario bundle: metadata, map, ground truth, frame table, scans."""
    directory = Path(directory)
    (directory / "scans").mkdir(parents=True, exist_ok=True)
    b = run.scene.bounds
    meta = [
        f"seed = {run.seed}",
        f"noise.sigma_t = {run.noise.sigma_t:.12g}",
        f"noise.sigma_yaw = {run.noise.sigma_yaw:.12g}",
        f"noise.seed = {run.noise.seed}",
        f"bounds.min = {b[0, 0]:.12g} {b[0, 1]:.12g} {b[0, 2]:.12g}",
        f"bounds.max = {b[1, 0]:.12g} {b[1, 1]:.12g} {b[1, 2]:.12g}",
    ]
    (directory / SCENARIO_META).write_text("\n".join(meta) + "\n", encoding="utf-8")
    write_cloud(run.scene.map, directory / "map.cld", binary=True)
    gt_rows = [
        TrajectoryRow(f.timestamp, p.tx, p.ty, p.tz, 0.0, 0.0, p.yaw, TrajectorySource.GROUND_TRUTH)
        for p, f in zip(run.ground_truth, run.frames)
    ]
    write_trajectory(gt_rows, directory / "ground_truth.csv")
    with open(directory / "frames.csv", "w", encoding="utf-8") as fh:
        fh.write(FRAMES_HEADER + "\n")
        for k, frame in enumerate(run.frames):
            d = frame.odom if frame.odom is not None else OdomDelta.zero()
            scan_name = f"scans/{k:06d}.cld"
            fh.write(
                f"{frame.timestamp:.12g},{d.dtx:.12g},{d.dty:.12g},{d.dtz:.12g},"
                f"{d.dyaw:.12g},{frame.attitude.roll:.12g},{frame.attitude.pitch:.12g},{scan_name}\n"
            )
            write_cloud(frame.cloud, directory / scan_name, binary=True)


def load_scenario(directory) -> ScenarioRun:
    """Read a bundle written by save_scenario."""
    directory = Path(directory)
    meta_path = directory / SCENARIO_META
    if not meta_path.is_file():
        raise ScenarioFormatError(f"{directory}: missing {SCENARIO_META}")
    meta = parse_keyvalues(meta_path.read_text(encoding="utf-8"), meta_path)
    try:
        seed = int(meta.get("seed", "0"))
        noise = NoiseSetup(
            float(meta.get("noise.sigma_t", "0")),
            float(meta.get("noise.sigma_yaw", "0")),
            int(meta.get("noise.seed", "0")),
        )
        bmin = [float(v) for v in meta["bounds.min"].split()]
        bmax = [float(v) for v in meta["bounds.max"].split()]
    except (KeyError, ValueError) as exc:
        raise ScenarioFormatError(f"{meta_path}: bad metadata: {exc}") from exc
    scene = Scene(read_cloud(directory / "map.cld", Frame.MAP), np.array([bmin, bmax]))
    gt_rows = read_trajectory(directory / "ground_truth.csv")
    poses = tuple(r.pose() for r in gt_rows)

    frames_path = directory / "frames.csv"
    lines = frames_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != FRAMES_HEADER:
        raise ScenarioFormatError(f"{frames_path}: bad header (expected '{FRAMES_HEADER}')")
    frames = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise ScenarioFormatError(f"{frames_path}: line {lineno}: expected 8 columns")
        try:
            t, dtx, dty, dtz, dyaw, roll, pitch = (float(v) for v in parts[:7])
        except ValueError:
            raise ScenarioFormatError(f"{frames_path}: line {lineno}: non-numeric field") from None
        cloud = read_cloud(directory / parts[7].strip(), Frame.SENSOR)
        frames.append(
            ScanFrame(cloud, Attitude(roll, pitch), OdomDelta(dtx, dty, dtz, dyaw), t)
        )
    if len(frames) != len(poses):
        raise ScenarioFormatError(
            f"{directory}: {len(frames)} frames but {len(poses)} ground-truth poses"
        )
    return ScenarioRun(scene, poses, tuple(frames), noise, seed)
