"""Rigid-body algebra, point clouds, spatial indexing and closed-form rigid fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateConfiguration, InvalidArgument

__all__ = [
    "RigidTransform",
    "PointCloud",
    "SpatialIndex",
    "compose",
    "apply",
    "voxel_downsample",
    "voxel_keys",
    "kabsch_fit",
    "knn",
    "quat_to_matrix",
    "matrix_to_quat",
]


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _canonical_quat(q: ArrayLike) -> NDArray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise InvalidArgument(f"quaternion has invalid norm {n}")
    q = q / n
    if q[0] < 0:
        q = -q
    return q


def quat_to_matrix(q: ArrayLike) -> NDArray:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: ArrayLike) -> NDArray:
    """Shepperd's method; picks the numerically largest pivot."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    i = int(np.argmax(diag))
    if i == 0:
        s = 2.0 * math.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return _canonical_quat(q)


def _quat_mul(a: NDArray, b: NDArray) -> NDArray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3) stored as a unit quaternion (w, x, y, z) and a translation.

    The quaternion is renormalised and sign-canonicalised to ``w >= 0`` on
    construction, so two transforms describing the same rotation serialise
    identically.
    """

    rotation: NDArray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: NDArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise InvalidArgument(f"translation must be a finite 3-vector, got {t!r}")
        object.__setattr__(self, "rotation", _frozen(_canonical_quat(self.rotation)))
        object.__setattr__(self, "translation", _frozen(t))

    # -- constructors -------------------------------------------------------
    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, R: ArrayLike, t: ArrayLike = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_matrix4(cls, M: ArrayLike) -> RigidTransform:
        M = np.asarray(M, dtype=np.float64)
        return cls.from_matrix(M[:3, :3], M[:3, 3])

    @classmethod
    def from_axis_angle(
        cls, axis: ArrayLike, angle: float, t: ArrayLike = (0.0, 0.0, 0.0)
    ) -> RigidTransform:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle
        return cls(np.concatenate([[math.cos(h)], math.sin(h) * axis]), t)

    @classmethod
    def from_yaw(cls, degrees: float, t: ArrayLike = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls.from_axis_angle((0.0, 0.0, 1.0), math.radians(degrees), t)

    @classmethod
    def from_vector(cls, v: ArrayLike) -> RigidTransform:
        """From the 7-float layout ``qw qx qy qz tx ty tz`` used in every file format."""
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape != (7,):
            raise InvalidArgument(f"expected 7 floats, got {v.size}")
        return cls(v[:4], v[4:])

    @classmethod
    def random(cls, rng: np.random.Generator, max_translation: float = 10.0) -> RigidTransform:
        q = rng.normal(size=4)
        return cls(q, rng.uniform(-max_translation, max_translation, size=3))

    # -- accessors ----------------------------------------------------------
    @property
    def matrix(self) -> NDArray:
        return quat_to_matrix(self.rotation)

    def as_matrix4(self) -> NDArray:
        M = np.eye(4)
        M[:3, :3] = self.matrix
        M[:3, 3] = self.translation
        return M

    def as_vector(self) -> NDArray:
        return np.concatenate([self.rotation, self.translation])

    def rotation_angle(self) -> float:
        """Geodesic rotation angle in radians, in [0, pi]."""
        w = min(1.0, abs(float(self.rotation[0])))
        # atan2 form stays accurate near zero where acos loses precision
        return 2.0 * math.atan2(float(np.linalg.norm(self.rotation[1:])), w)

    # -- group operations ---------------------------------------------------
    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = _quat_mul(self.rotation, other.rotation)
        t = self.matrix @ other.translation + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def apply(self, points: ArrayLike) -> NDArray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix.T + self.translation

    def distance_to(self, other: RigidTransform) -> tuple[float, float]:
        """(rotation angle in degrees, translation error in meters) of ``self ∘ other⁻¹``."""
        d = self.compose(other.inverse())
        return math.degrees(d.rotation_angle()), float(np.linalg.norm(self.translation - other.translation))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N×3 points in meters with an optional N×D feature matrix."""

    points: NDArray
    features: NDArray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim == 1 and p.size == 0:
            p = p.reshape(0, 3)
        if p.ndim != 2 or p.shape[1] != 3:
            raise InvalidArgument(f"points must be N x 3, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InvalidArgument("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(p))
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != p.shape[0]:
                raise InvalidArgument(
                    f"feature matrix must have one row per point ({p.shape[0]}), got {f.shape}"
                )
            object.__setattr__(self, "features", _frozen(f))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def feature_dim(self) -> int:
        return 0 if self.features is None else int(self.features.shape[1])

    def subset(self, index: ArrayLike) -> PointCloud:
        f = None if self.features is None else self.features[index]
        return PointCloud(self.points[index], f)


def apply(t: RigidTransform, cloud: PointCloud) -> PointCloud:
    if len(cloud) == 0:
        raise InvalidArgument("cannot transform an empty cloud")
    return PointCloud(t.apply(cloud.points), cloud.features)


def voxel_keys(points: NDArray, resolution: float) -> NDArray:
    # floor puts boundary points in the higher-index voxel
    return np.floor(np.asarray(points) / resolution).astype(np.int64)


def voxel_downsample(cloud: PointCloud, resolution: float) -> PointCloud:
    """Replace every occupied voxel by the centroid of its members.

    Output points are ordered by ascending voxel key (lexicographic x, y, z).
    Features, when present, are averaged the same way.
    """
    if not resolution > 0:
        raise InvalidArgument(f"voxel resolution must be positive, got {resolution}")
    if len(cloud) == 0:
        return cloud
    keys = voxel_keys(cloud.points, resolution)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n = counts.shape[0]
    sums = np.zeros((n, 3))
    np.add.at(sums, inverse, cloud.points)
    pts = sums / counts[:, None]
    feats = None
    if cloud.features is not None:
        fs = np.zeros((n, cloud.feature_dim))
        np.add.at(fs, inverse, cloud.features)
        feats = fs / counts[:, None]
    return PointCloud(pts, feats)


def kabsch_fit(source: ArrayLike, target: ArrayLike) -> RigidTransform:
    """Least-squares rigid transform T minimising sum ||T(s_i) - t_i||^2.

    Reflections are excluded by flipping the smallest singular direction.
    """
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise InvalidArgument(f"source/target shapes differ or are not N x 3: {src.shape} vs {dst.shape}")
    if src.shape[0] < 3:
        raise DegenerateConfiguration(f"need at least 3 pairs, got {src.shape[0]}")
    mu_s = src.mean(axis=0)
    mu_t = dst.mean(axis=0)
    H = (src - mu_s).T @ (dst - mu_t)
    U, S, Vt = np.linalg.svd(H)
    scale = max(S[0], 1e-300)
    if S[0] < 1e-18 or S[1] <= 1e-10 * scale:
        raise DegenerateConfiguration("centered covariance has rank < 2 (collinear or coincident points)")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform.from_matrix(R, mu_t - R @ mu_s)


class SpatialIndex:
    """Immutable k-d tree over a fixed point set (any dimension).

    Splits on the widest-spread axis at the median with 16 points per leaf.
    ``knn`` results are exact and ties on distance go to the lower point id.
    """

    leaf_size = 16

    def __init__(self, points: ArrayLike):
        pts = np.array(points, dtype=np.float64, copy=True)
        if pts.ndim != 2:
            raise InvalidArgument(f"index points must be a 2-d array, got shape {pts.shape}")
        pts.setflags(write=False)
        self._points = pts
        self._tree = cKDTree(pts, leafsize=self.leaf_size, balanced_tree=True, compact_nodes=False) if len(pts) else None

    @property
    def points(self) -> NDArray:
        return self._points

    def __len__(self) -> int:
        return int(self._points.shape[0])

    def knn(self, query: ArrayLike, k: int) -> list[tuple[int, float]]:
        if k < 1:
            raise InvalidArgument(f"k must be >= 1, got {k}")
        if self._tree is None:
            raise InvalidArgument("index is empty")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        k = min(k, len(self))
        d, idx = self._tree.query(q, k=k)
        d = np.atleast_1d(d)
        idx = np.atleast_1d(idx)
        # gather every point tied with the k-th distance so the id tie-break is exact
        kth = float(d[-1])
        ball = self._tree.query_ball_point(q, r=kth * (1 + 1e-12) + 1e-300)
        cand = np.union1d(idx, np.asarray(ball, dtype=np.int64))
        dist = np.linalg.norm(self._points[cand] - q, axis=1)
        order = np.lexsort((cand, dist))[:k]
        return [(int(cand[i]), float(dist[i])) for i in order]

    def nearest(self, queries: ArrayLike, max_distance: float = np.inf) -> tuple[NDArray, NDArray]:
        """Bulk 1-NN. Returns (distances, ids); misses beyond ``max_distance`` get inf / len(self)."""
        if self._tree is None:
            raise InvalidArgument("index is empty")
        return self._tree.query(np.asarray(queries, dtype=np.float64), k=1, distance_upper_bound=max_distance)

    def radius(self, query: ArrayLike, r: float) -> NDArray:
        if self._tree is None:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.asarray(self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r), dtype=np.int64))


def knn(index: SpatialIndex, query: ArrayLike, k: int) -> list[tuple[int, float]]:
    return index.knn(query, k)

