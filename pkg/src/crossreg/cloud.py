"""Geometric primitives shared by every stage: point clouds, similarity
transforms, exact spatial queries, ASCII PLY I/O.

Conventions
-----------
- Coordinates are float64 meters, clouds are (N, 3) arrays.
- A SimilarityTransform maps a point p to ``scale * R @ p + t``.
- Spatial queries are exact: results must coincide with a brute-force
  linear scan (nearest-neighbor ties broken by the smallest point index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError, PlyParseError

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D points with an opaque string label.

    Immutable after construction; the coordinate array is copied and
    marked read-only. All coordinates must be finite.
    """

    points: np.ndarray
    id: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"expected (N, 3) points, got shape {pts.shape}")
        if not np.isfinite(pts).all():
            raise DataError("non-finite coordinate in point cloud")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def require_nonempty(self, op: str) -> None:
        if len(self) == 0:
            raise DataError(f"{op}: empty point cloud")


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation + translation + uniform scale, p -> scale * R @ p + t."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        s = float(self.scale)
        if not (np.isfinite(R).all() and np.isfinite(t).all() and math.isfinite(s)):
            raise DataError("non-finite transform component")
        if s <= 0.0:
            raise DataError(f"scale must be positive, got {s}")
        err = np.abs(R.T @ R - np.eye(3)).max()
        det = np.linalg.det(R)
        if err > ROTATION_TOL or abs(det - 1.0) > ROTATION_TOL:
            raise DataError(
                f"rotation not orthonormal: |R^T R - I|={err:.3e}, det={det:.12f}"
            )
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Return T with T(p) = self(other(p))."""
        R = self.rotation @ other.rotation
        s = self.scale * other.scale
        t = self.scale * (self.rotation @ other.translation) + self.translation
        return SimilarityTransform(R, t, s)

    def inverse(self) -> "SimilarityTransform":
        R = self.rotation.T
        s = 1.0 / self.scale
        t = -s * (R @ self.translation)
        return SimilarityTransform(R, t, s)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix, top-left block scale * R, last column t."""
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M


class SpatialIndex:
    """Exact nearest-neighbor / radius queries over one cloud (kd-tree).

    Read-only after construction; concurrent queries are safe.
    """

    def __init__(self, cloud: PointCloud):
        cloud.require_nonempty("SpatialIndex")
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def __len__(self) -> int:
        return len(self.cloud)

    def nearest(self, query) -> tuple[int, float]:
        """Index and distance of the closest point; ties -> smallest index."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        d0, _ = self._tree.query(q)
        # Re-examine everything within a hair of the tree's best distance so
        # tie-breaking is by index, independent of kd-tree internals.
        r = d0 * (1.0 + 1e-9) + 1e-300
        cand = np.sort(np.asarray(self._tree.query_ball_point(q, r), dtype=np.int64))
        dists = np.linalg.norm(self.cloud.points[cand] - q, axis=1)
        best = np.flatnonzero(dists == dists.min())[0]
        return int(cand[best]), float(dists[best])

    def query_batch(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest-neighbor distances and indices (no tie rule)."""
        d, i = self._tree.query(np.asarray(points, dtype=np.float64))
        return np.atleast_1d(d), np.atleast_1d(i).astype(np.int64)

    def within_radius(self, center, radius: float) -> np.ndarray:
        """Sorted indices of points with Euclidean distance <= radius."""
        c = np.asarray(center, dtype=np.float64).reshape(3)
        # Inflate then filter exactly so the boundary rule matches a linear scan.
        rough = self._tree.query_ball_point(c, radius * (1.0 + 1e-12) + 1e-300)
        idx = np.sort(np.asarray(rough, dtype=np.int64))
        if idx.size == 0:
            return idx
        keep = np.linalg.norm(self.cloud.points[idx] - c, axis=1) <= radius
        return idx[keep]


def derive_seed(*keys: int) -> int:
    """Stable per-work-item seed from a tuple of integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# basic geometry
# ---------------------------------------------------------------------------

def centroid(cloud: PointCloud) -> np.ndarray:
    cloud.require_nonempty("centroid")
    return cloud.points.mean(axis=0)


def bounding_radius(cloud: PointCloud, center) -> float:
    """Maximum Euclidean distance from center to any cloud point."""
    cloud.require_nonempty("bounding_radius")
    c = np.asarray(center, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(cloud.points - c, axis=1).max())


def crop_sphere(
    cloud: PointCloud, index: SpatialIndex, center, radius: float
) -> PointCloud:
    """Points with distance <= radius from center, original order kept."""
    if radius <= 0:
        raise DataError(f"crop_sphere: radius must be positive, got {radius}")
    idx = index.within_radius(center, radius)
    return PointCloud(cloud.points[idx], id=cloud.id)


def uniform_downsample(cloud: PointCloud, max_points: int, seed: int) -> PointCloud:
    """Uniform random subset of max_points points (original order kept).

    Clouds already at or below the threshold are returned unchanged, so
    the operation is idempotent there.
    """
    if max_points < 1:
        raise DataError(f"uniform_downsample: max_points must be >= 1, got {max_points}")
    if len(cloud) <= max_points:
        return cloud
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(cloud), size=max_points, replace=False))
    return PointCloud(cloud.points[keep], id=cloud.id)


def apply_transform(cloud: PointCloud, transform: SimilarityTransform) -> PointCloud:
    return PointCloud(transform.apply(cloud.points), id=cloud.id)


def nearest_neighbor(index: SpatialIndex, query) -> tuple[int, float]:
    return index.nearest(query)


def remove_statistical_outliers(
    cloud: PointCloud, k: int = 16, std_factor: float = 2.0
) -> PointCloud:
    """Drop points whose mean distance to their k nearest neighbors exceeds
    the population mean by std_factor standard deviations."""
    n = len(cloud)
    if n <= k + 1:
        return cloud
    tree = cKDTree(cloud.points)
    d, _ = tree.query(cloud.points, k=k + 1)  # column 0 is the point itself
    mean_d = d[:, 1:].mean(axis=1)
    cut = mean_d.mean() + std_factor * mean_d.std()
    return PointCloud(cloud.points[mean_d <= cut], id=cloud.id)


# ---------------------------------------------------------------------------
# ASCII PLY I/O
# ---------------------------------------------------------------------------

def load_ply(path) -> PointCloud:
    """Read an ASCII PLY file with at least float x, y, z vertex properties.

    Extra vertex properties are ignored; elements after the vertex block
    are skipped. Raises PlyParseError with a distinct message for a
    malformed header, a vertex count mismatch, zero vertices, or a
    non-finite coordinate.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [ln for ln in lines if ln and not ln.startswith("comment")]

    if not lines or lines[0] != "ply":
        raise PlyParseError(f"{path}: malformed header: missing 'ply' magic")
    if len(lines) < 2 or lines[1].split() != ["format", "ascii", "1.0"]:
        raise PlyParseError(f"{path}: malformed header: expected 'format ascii 1.0'")

    n_vertices = None
    prop_names: list[str] = []
    in_vertex_element = False
    body_start = None
    for i, ln in enumerate(lines[2:], start=2):
        tok = ln.split()
        if tok[0] == "end_header":
            body_start = i + 1
            break
        if tok[0] == "element":
            if len(tok) != 3:
                raise PlyParseError(f"{path}: malformed header: bad element line '{ln}'")
            if tok[1] == "vertex":
                if n_vertices is not None:
                    raise PlyParseError(f"{path}: malformed header: duplicate vertex element")
                try:
                    n_vertices = int(tok[2])
                except ValueError:
                    raise PlyParseError(f"{path}: malformed header: bad vertex count '{tok[2]}'")
                in_vertex_element = True
            else:
                if n_vertices is None:
                    raise PlyParseError(
                        f"{path}: malformed header: element '{tok[1]}' precedes vertex element"
                    )
                in_vertex_element = False
        elif tok[0] == "property":
            if in_vertex_element:
                prop_names.append(tok[-1])
        else:
            raise PlyParseError(f"{path}: malformed header: unexpected line '{ln}'")
    if body_start is None:
        raise PlyParseError(f"{path}: malformed header: missing end_header")
    if n_vertices is None:
        raise PlyParseError(f"{path}: malformed header: no vertex element")
    if n_vertices == 0:
        raise PlyParseError(f"{path}: zero vertices")
    missing = {"x", "y", "z"} - set(prop_names)
    if missing:
        raise PlyParseError(f"{path}: malformed header: missing properties {sorted(missing)}")
    cols = [prop_names.index(a) for a in ("x", "y", "z")]

    rows = lines[body_start : body_start + n_vertices]
    if len(rows) < n_vertices:
        raise PlyParseError(f"{path}: vertex count mismatch: header says {n_vertices}, found {len(rows)}")
    pts = np.empty((n_vertices, 3), dtype=np.float64)
    for r, ln in enumerate(rows):
        tok = ln.split()
        if len(tok) < len(prop_names):
            raise PlyParseError(f"{path}: vertex row {r} has {len(tok)} fields, expected {len(prop_names)}")
        try:
            pts[r] = [float(tok[c]) for c in cols]
        except ValueError:
            raise PlyParseError(f"{path}: vertex row {r}: unparseable coordinate")
    if not np.isfinite(pts).all():
        raise PlyParseError(f"{path}: non-finite coordinate")
    return PointCloud(pts, id=str(path))


def save_ply(cloud: PointCloud, path) -> None:
    """Write an ASCII PLY with x, y, z float properties only.

    Coordinates are printed with 17 significant digits so a reload is
    bit-exact.
    """
    cloud.require_nonempty("save_ply")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("ply\n")
        fh.write("format ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\n")
        fh.write("property float y\n")
        fh.write("property float z\n")
        fh.write("end_header\n")
        for x, y, z in cloud.points:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
