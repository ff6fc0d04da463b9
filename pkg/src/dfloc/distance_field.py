"""Distance-field grid: build, trilinear query with analytic gradient, file io.

The field stores, on a fixed-resolution voxel lattice, the exact distance
from each lattice node to the closest map point. Each cell additionally
holds the 8 coefficients of the trilinear polynomial

    f(x, y, z) = a0 + a1*x + a2*y + a3*z + a4*x*y + a5*x*z + a6*y*z + a7*x*y*z

expressed in cell-local metric coordinates (origin at the cell's minimum
corner, offsets in meters within [0, resolution]). The polynomial
reproduces the 8 corner distances exactly and provides the analytic
gradient the registration solver consumes.

Queries outside the grid volume return value 0, gradient 0, inside=False,
so off-map points drop out of the optimization instead of raising.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import Frame, FrameError, PointCloud
from .nnsearch import build_index

GRID_MAGIC = b"DFGRID1\n"
GRID_VERSION = 1

# Refuse headers implying more lattice nodes than this (corrupt or hostile files).
MAX_NODES = 1 << 33


class GridFileError(ValueError):
    """Malformed distance-field grid file."""


class GridMagicError(GridFileError):
    """File does not start with the grid magic bytes."""


class GridVersionError(GridFileError):
    """Grid file version is not supported."""


class GridTruncatedError(GridFileError):
    """File size is inconsistent with the header counts."""


class GridDimensionError(GridFileError):
    """Header cell counts are invalid or exceed the supported size."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the voxel grid: minimum corner, cell edge, cell counts."""

    origin: np.ndarray
    resolution: float
    nx: int
    ny: int
    nz: int
    margin: float = 0.0

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()
        if not np.isfinite(origin).all():
            raise ValueError("grid origin must be finite")
        origin.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        if not self.resolution > 0.0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValueError("grids need at least 2 cells per axis")
        if self.margin < 0.0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")

    @property
    def counts(self) -> np.ndarray:
        return np.array([self.nx, self.ny, self.nz])

    @property
    def upper(self) -> np.ndarray:
        """Maximum corner of the grid volume."""
        return self.origin + self.resolution * self.counts

    def node_coordinates(self) -> np.ndarray:
        """All lattice node positions, shape ((nx+1)*(ny+1)*(nz+1), 3), x fastest last axis order (ij indexing)."""
        axes = [self.origin[a] + self.resolution * np.arange(self.counts[a] + 1) for a in range(3)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, 3)

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the closed grid volume."""
        pts = np.asarray(pts, dtype=np.float64)
        return ((pts >= self.origin) & (pts <= self.upper)).all(axis=-1)


@dataclass(frozen=True)
class DfSample:
    """One distance-field lookup: interpolated value, gradient, in-volume flag."""

    value: float
    gradient: np.ndarray
    inside: bool


@dataclass(frozen=True)
class DfGrid:
    """Built distance field: node lattice plus per-cell trilinear coefficients.

    node_distances has shape (nx+1, ny+1, nz+1); coeffs has shape
    (nx, ny, nz, 8). Both are read-only after construction, so a grid can
    serve any number of concurrent queries.
    """

    spec: GridSpec
    node_distances: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(np.asarray(self.node_distances, dtype=np.float64))
        coeffs = np.ascontiguousarray(np.asarray(self.coeffs, dtype=np.float64))
        expect_nodes = (self.spec.nx + 1, self.spec.ny + 1, self.spec.nz + 1)
        expect_cells = (self.spec.nx, self.spec.ny, self.spec.nz, 8)
        if nodes.shape != expect_nodes:
            raise ValueError(f"node lattice shape {nodes.shape} != {expect_nodes}")
        if coeffs.shape != expect_cells:
            raise ValueError(f"coefficient array shape {coeffs.shape} != {expect_cells}")
        if not np.isfinite(nodes).all() or (nodes < 0.0).any():
            raise ValueError("node distances must be finite and non-negative")
        nodes.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "node_distances", nodes)
        object.__setattr__(self, "coeffs", coeffs)


def plan_grid(cloud: PointCloud, resolution: float, margin: float = 1.0) -> GridSpec:
    """Choose a grid covering the map bounding box plus ``margin`` on every side.

    The origin is the padded bounding-box minimum; cell counts are the
    smallest that cover the padded box, never below 2 per axis (a
    degenerate single-point map still yields a valid 2x2x2 grid).
    """
    if len(cloud) == 0:
        raise ValueError("cannot plan a grid for an empty map")
    if not resolution > 0.0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    if margin < 0.0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    lo = cloud.points.min(axis=0) - margin
    hi = cloud.points.max(axis=0) + margin
    span = hi - lo
    # The 1e-9 slack keeps exact tilings (span an integer multiple of the
    # resolution) from picking up a spurious extra cell.
    counts = np.maximum(2, np.ceil(span / resolution - 1e-9).astype(int))
    return GridSpec(lo, float(resolution), int(counts[0]), int(counts[1]), int(counts[2]), float(margin))


def fit_cell_coeffs(corner_distances, resolution: float) -> np.ndarray:
    """Closed-form trilinear coefficients from 8 cell-corner values.

    Corners are ordered x fastest, then y, then z:
    (0,0,0), (1,0,0), (0,1,0), (1,1,0), (0,0,1), (1,0,1), (0,1,1), (1,1,1).
    Accepts a stack of shape (..., 8) and returns coefficients of the same
    shape, in cell-local metric coordinates.
    """
    d = np.asarray(corner_distances, dtype=np.float64)
    if d.shape[-1] != 8:
        raise ValueError(f"expected 8 corner values on the last axis, got shape {d.shape}")
    r = float(resolution)
    r2, r3 = r * r, r * r * r
    d000, d100, d010, d110, d001, d101, d011, d111 = np.moveaxis(d, -1, 0)
    out = np.empty_like(d)
    out[..., 0] = d000
    out[..., 1] = (d100 - d000) / r
    out[..., 2] = (d010 - d000) / r
    out[..., 3] = (d001 - d000) / r
    out[..., 4] = (d110 - d100 - d010 + d000) / r2
    out[..., 5] = (d101 - d100 - d001 + d000) / r2
    out[..., 6] = (d011 - d010 - d001 + d000) / r2
    out[..., 7] = (d111 - d110 - d101 - d011 + d100 + d010 + d001 - d000) / r3
    return out


def build_grid(cloud: PointCloud, spec: GridSpec, workers: int = -1) -> DfGrid:
    """Compute exact nearest-map distances on the lattice and fit every cell.

    This is the expensive offline step; ``workers`` is forwarded to the
    nearest-neighbor queries (-1 = all cores). The result is bitwise
    independent of the worker count.
    """
    if len(cloud) == 0:
        raise ValueError("cannot build a distance field from an empty map")
    if cloud.frame is not Frame.MAP:
        raise FrameError(f"distance fields are built from map-frame clouds, got '{cloud.frame.value}'")
    index = build_index(cloud)
    _, dist = index.nearest_many(spec.node_coordinates(), workers=workers)
    nodes = dist.reshape(spec.nx + 1, spec.ny + 1, spec.nz + 1)
    corners = np.stack(
        [
            nodes[:-1, :-1, :-1],
            nodes[1:, :-1, :-1],
            nodes[:-1, 1:, :-1],
            nodes[1:, 1:, :-1],
            nodes[:-1, :-1, 1:],
            nodes[1:, :-1, 1:],
            nodes[:-1, 1:, 1:],
            nodes[1:, 1:, 1:],
        ],
        axis=-1,
    )
    coeffs = fit_cell_coeffs(corners, spec.resolution)
    return DfGrid(spec, nodes, coeffs)


def query_many(grid: DfGrid, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Evaluate the field at an (N, 3) block of map-frame points.

    Returns (values, gradients, inside): values (N,), gradients (N, 3)
    and the in-volume mask. Outside points get value 0 and gradient 0.
    """
    pts = np.asarray(pts, dtype=np.float64)
    value, gx, gy, gz, inside = query_columns(grid, pts[..., 0], pts[..., 1], pts[..., 2])
    grad = np.empty(pts.shape)
    grad[..., 0] = gx
    grad[..., 1] = gy
    grad[..., 2] = gz
    if not inside.all():
        grad[~inside] = 0.0
    return value, grad, inside


def query_columns(grid: DfGrid, qx, qy, qz):
    """Column-level field evaluation: returns (value, gx, gy, gz, inside).

    This is the hot path shared by query_many and the registration
    residuals; it works on 1D coordinate arrays to avoid (N, 3)
    intermediates and axis reductions. ``value`` is zeroed outside the
    volume; the returned gradient columns are NOT masked (query_many
    masks them when packing the (N, 3) gradient).
    """
    spec = grid.spec
    res = spec.resolution
    nx, ny, nz = spec.nx, spec.ny, spec.nz
    ox, oy, oz = spec.origin
    rx = (qx - ox) / res
    ry = (qy - oy) / res
    rz = (qz - oz) / res
    inside = (
        (rx >= 0.0) & (rx <= nx) & (ry >= 0.0) & (ry <= ny) & (rz >= 0.0) & (rz <= nz)
    )
    # Upper boundary folds into the last cell.
    ix = np.clip(np.floor(rx).astype(np.int64), 0, nx - 1)
    iy = np.clip(np.floor(ry).astype(np.int64), 0, ny - 1)
    iz = np.clip(np.floor(rz).astype(np.int64), 0, nz - 1)
    flat = (ix * ny + iy) * nz + iz
    c0, c1, c2, c3, c4, c5, c6, c7 = np.take(grid.coeffs.reshape(-1, 8), flat, axis=0).T
    x = qx - (ox + ix * res)
    y = qy - (oy + iy * res)
    z = qz - (oz + iz * res)
    t2 = c2 + c4 * x
    t4 = c6 + c7 * x
    gz = (c3 + c5 * x) + y * t4
    value = c0 + c1 * x + y * t2 + z * gz
    gy = t2 + z * t4
    gx = c1 + y * c4 + z * (c5 + y * c7)
    if not inside.all():
        value = np.where(inside, value, 0.0)
    return value, gx, gy, gz, inside


def query(grid: DfGrid, x) -> DfSample:
    """Evaluate the field at one map-frame point."""
    value, grad, inside = query_many(grid, np.asarray(x, dtype=np.float64)[None, :])
    return DfSample(float(value[0]), grad[0], bool(inside[0]))


def save_grid(grid: DfGrid, path) -> None:
    """Write a grid to the binary .df layout (see FORMATS.md)."""
    spec = grid.spec
    header = GRID_MAGIC + struct.pack(
        "<I3ddd3Q",
        GRID_VERSION,
        float(spec.origin[0]),
        float(spec.origin[1]),
        float(spec.origin[2]),
        spec.resolution,
        spec.margin,
        spec.nx,
        spec.ny,
        spec.nz,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        grid.node_distances.astype("<f8", copy=False).tofile(fh)
        grid.coeffs.astype("<f8", copy=False).tofile(fh)


_HEADER_FMT = "<I3ddd3Q"
_HEADER_SIZE = len(GRID_MAGIC) + struct.calcsize(_HEADER_FMT)


def load_grid(path) -> DfGrid:
    """Read a grid written by save_grid; the round trip is bit-exact.

    Raises GridMagicError, GridVersionError, GridDimensionError or
    GridTruncatedError for the corresponding malformed inputs.
    """
    with open(path, "rb") as fh:
        head = fh.read(_HEADER_SIZE)
        if len(head) < len(GRID_MAGIC) or head[: len(GRID_MAGIC)] != GRID_MAGIC:
            raise GridMagicError(f"{path}: not a distance-field grid file")
        if len(head) < _HEADER_SIZE:
            raise GridTruncatedError(f"{path}: header truncated")
        version, ox, oy, oz, resolution, margin, nx, ny, nz = struct.unpack(
            _HEADER_FMT, head[len(GRID_MAGIC) :]
        )
        if version != GRID_VERSION:
            raise GridVersionError(f"{path}: unsupported grid version {version}")
        if min(nx, ny, nz) < 2:
            raise GridDimensionError(f"{path}: invalid cell counts {(nx, ny, nz)}")
        n_nodes = (nx + 1) * (ny + 1) * (nz + 1)
        n_cells = nx * ny * nz
        if n_nodes > MAX_NODES:
            raise GridDimensionError(f"{path}: header counts {(nx, ny, nz)} exceed the supported size")
        payload = fh.read()
    expected = 8 * (n_nodes + 8 * n_cells)
    if len(payload) != expected:
        raise GridTruncatedError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    nodes = np.frombuffer(payload, dtype="<f8", count=n_nodes).reshape(nx + 1, ny + 1, nz + 1)
    coeffs = np.frombuffer(payload, dtype="<f8", offset=8 * n_nodes).reshape(nx, ny, nz, 8)
    try:
        spec = GridSpec(np.array([ox, oy, oz]), resolution, nx, ny, nz, margin)
        return DfGrid(spec, nodes, coeffs)
    except ValueError as exc:
        raise GridFileError(f"{path}: {exc}") from exc
