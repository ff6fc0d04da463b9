"""Exact 3D nearest-neighbor search for the offline distance-field build.

The index wraps scipy's cKDTree (median split on the widest axis, leaf
bucket size 16). Returned distances are always recomputed from the
winning point with the same expression ``brute_force_nearest`` uses, so
the tree and the linear-scan oracle agree bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

LEAF_SIZE = 16


def _as_points(points) -> np.ndarray:
    if isinstance(points, PointCloud):
        return points.points
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {pts.shape}")
    return pts


def _exact_distance(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    # Shared distance expression; keeps tree and oracle bitwise identical.
    return np.sqrt(((q - p) ** 2).sum(axis=-1))


class KdTree3:
    """Immutable exact nearest-neighbor index over a fixed 3D point set.

    Queries are safe from any number of concurrent workers; the build is
    single-threaded and deterministic for a given input order.
    """

    def __init__(self, points):
        pts = _as_points(points)
        if pts.shape[0] == 0:
            raise ValueError("cannot build an index over an empty cloud")
        if not np.isfinite(pts).all():
            raise ValueError("index points must be finite")
        self.points = np.ascontiguousarray(pts)
        self.points.setflags(write=False)
        self._tree = cKDTree(self.points, leafsize=LEAF_SIZE, balanced_tree=True)

    def __len__(self) -> int:
        return self.points.shape[0]

    def nearest(self, q) -> tuple[np.ndarray, float]:
        """Closest stored point to ``q`` and its exact Euclidean distance."""
        q = np.asarray(q, dtype=np.float64)
        _, idx = self._tree.query(q, k=1)
        p = self.points[int(idx)]
        return p, float(_exact_distance(q, p))

    def nearest_many(self, queries, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest lookup for an (N, 3) query block."""
        queries = np.asarray(queries, dtype=np.float64)
        _, idx = self._tree.query(queries, k=1, workers=workers)
        winners = self.points[idx]
        return winners, _exact_distance(queries, winners)


def build_index(points) -> KdTree3:
    """Build the exact nearest-neighbor index used by the grid builder."""
    return KdTree3(points)


def nearest(index: KdTree3, q) -> tuple[np.ndarray, float]:
    """Closest indexed point to ``q`` and its distance (exact, not approximate)."""
    return index.nearest(q)


def brute_force_nearest(points, q) -> tuple[np.ndarray, float]:
    """Linear-scan nearest neighbor; the independent oracle for KdTree3."""
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("cannot search an empty cloud")
    q = np.asarray(q, dtype=np.float64)
    d2 = ((pts - q) ** 2).sum(axis=1)
    p = pts[int(np.argmin(d2))]
    return p, float(_exact_distance(q, p))


def brute_force_distances(points, queries, block: int | None = None) -> np.ndarray:
    """Exact nearest distance from each query to the cloud by blocked linear scan.

    The argmin runs on the expanded |q|^2 - 2 q.p + |p|^2 form (fast, BLAS),
    then the winning distance is recomputed by direct subtraction so the
    result carries no cancellation error.
    """
    pts = _as_points(points)
    if pts.shape[0] == 0:
        raise ValueError("cannot search an empty cloud")
    queries = np.asarray(queries, dtype=np.float64)
    single = queries.ndim == 1
    q = queries[None, :] if single else queries
    if block is None:
        block = max(1, 16_000_000 // pts.shape[0])
    p2 = (pts**2).sum(axis=1)
    win = np.empty(q.shape[0], dtype=np.intp)
    for start in range(0, q.shape[0], block):
        blk = q[start : start + block]
        d2 = (blk**2).sum(axis=1)[:, None] - 2.0 * (blk @ pts.T) + p2[None, :]
        win[start : start + block] = np.argmin(d2, axis=1)
    dist = _exact_distance(q, pts[win])
    return dist[0] if single else dist
