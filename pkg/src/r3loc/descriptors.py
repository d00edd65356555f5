"""Global / local place descriptors and the Scan Context baseline.

The learned detector and descriptor heads are replaced by deterministic
geometry: keypoints are centroids of the densest 1 m voxels, and local
descriptors are yaw-invariant occupancy/height histograms. Precomputed
embeddings can be ingested instead (see :mod:`r3loc.io`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidArgument
from .geometry import PointCloud, SpatialIndex, voxel_keys

GLOBAL_DIM = 256
LOCAL_DIM = 128
GEM_P = 3.0
CLAMP_EPS = 1e-6


def _unit(v: ArrayLike, dim: int, what: str) -> NDArray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape != (dim,):
        raise InvalidArgument(f"{what} must have {dim} entries, got {v.size}")
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise InvalidArgument(f"{what} has zero or non-finite norm")
    # stored as float32 so on-disk blobs round-trip bit-exactly
    out = (v / n).astype(np.float32)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GlobalDescriptor:
    vector: NDArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vector", _unit(self.vector, GLOBAL_DIM, "global descriptor"))


@dataclass(frozen=True)
class LocalKeypoint:
    position: NDArray
    descriptor: NDArray
    saliency: float = 1.0


class Keypoints:
    """Columnar set of local keypoints (positions M×3, descriptors M×128, saliency M)."""

    def __init__(self, positions: ArrayLike, descriptors: ArrayLike, saliency: ArrayLike | None = None):
        pos = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
        desc = np.asarray(descriptors, dtype=np.float64).reshape(-1, LOCAL_DIM)
        if pos.shape[0] != desc.shape[0]:
            raise InvalidArgument("keypoint positions and descriptors differ in count")
        if not np.all(np.isfinite(pos)):
            raise InvalidArgument("keypoint positions must be finite")
        norms = np.linalg.norm(desc, axis=1, keepdims=True)
        valid = norms[:, 0] > 0
        desc = np.where(valid[:, None], desc / np.where(norms == 0, 1.0, norms), 0.0).astype(np.float32)
        sal = np.ones(pos.shape[0], dtype=np.float32) if saliency is None else np.asarray(saliency, dtype=np.float32).reshape(-1)
        if sal.shape[0] != pos.shape[0] or np.any(sal < 0):
            raise InvalidArgument("saliency must be one non-negative value per keypoint")
        for a in (pos, desc, sal):
            a.setflags(write=False)
        self.positions = pos
        self.descriptors = desc
        self.saliency = sal
        self.valid = valid

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    def __iter__(self) -> Iterator[LocalKeypoint]:
        for p, d, s in zip(self.positions, self.descriptors, self.saliency):
            yield LocalKeypoint(p, d, float(s))

    def to_matrix(self) -> NDArray:
        """M×132 layout used on disk: x y z saliency d0..d127."""
        return np.hstack([self.positions, self.saliency[:, None], self.descriptors]).astype(np.float32)

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> Keypoints:
        m = np.asarray(m, dtype=np.float32)
        if m.size == 0:
            return cls(np.zeros((0, 3)), np.zeros((0, LOCAL_DIM)))
        if m.ndim != 2 or m.shape[1] != 4 + LOCAL_DIM:
            raise InvalidArgument(f"keypoint matrix must be M x {4 + LOCAL_DIM}, got {m.shape}")
        return cls(m[:, :3], m[:, 4:], m[:, 3])


def gem_pool(features: ArrayLike, p: float = GEM_P) -> NDArray:
    """Generalised-mean pooling over rows: ``(mean_k f_kd^p)^(1/p)``."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise InvalidArgument("gem_pool needs a non-empty K x D matrix")
    if p < 1:
        raise InvalidArgument(f"GeM exponent must be >= 1, got {p}")
    f = np.maximum(f, CLAMP_EPS)
    return np.mean(f ** p, axis=0) ** (1.0 / p)


# -- Scan Context -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScanContextDescriptor:
    """Ring × sector matrix of the maximum point height per polar bin (0 when empty)."""

    matrix: NDArray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape  # type: ignore[return-value]

    def column_rotate(self, shift: int) -> ScanContextDescriptor:
        return ScanContextDescriptor(np.roll(self.matrix, shift, axis=1))


def extract_scan_context(
    cloud: PointCloud, max_radius: float = 80.0, rings: int = 20, sectors: int = 60
) -> ScanContextDescriptor:
    if max_radius <= 0:
        raise InvalidArgument("max_radius must be positive")
    pts = cloud.points
    r = np.hypot(pts[:, 0], pts[:, 1])
    theta = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2 * math.pi)
    ring = np.floor(r / (max_radius / rings)).astype(np.int64)
    sector = np.floor(theta / (2 * math.pi / sectors)).astype(np.int64)
    sector = np.minimum(sector, sectors - 1)  # theta rounding to exactly 2*pi
    keep = ring < rings
    bins = np.full(rings * sectors, -np.inf)
    np.maximum.at(bins, ring[keep] * sectors + sector[keep], pts[keep, 2])
    bins[np.isinf(bins)] = 0.0
    return ScanContextDescriptor(bins.reshape(rings, sectors))


def scan_context_distance(a: ScanContextDescriptor, b: ScanContextDescriptor) -> float:
    """Yaw-invariant distance: minimum over sector shifts of the mean column cosine distance.

    Only columns occupied in both descriptors are compared; per-column
    similarity is clipped to [0, 1] so the result stays in [0, 1].
    """
    return scan_context_distance_with_shift(a, b)[0]


def scan_context_distance_with_shift(a: ScanContextDescriptor, b: ScanContextDescriptor) -> tuple[float, int]:
    A, B = np.asarray(a.matrix, np.float64), np.asarray(b.matrix, np.float64)
    if A.shape != B.shape:
        raise InvalidArgument(f"scan context shapes differ: {A.shape} vs {B.shape}")
    na, nb = np.linalg.norm(A, axis=0), np.linalg.norm(B, axis=0)
    An = A / np.where(na > 0, na, 1.0)
    Bn = B / np.where(nb > 0, nb, 1.0)
    G = np.clip(An.T @ Bn, 0.0, 1.0)  # G[j, l] = cos(col j of a, col l of b)
    S = A.shape[1]
    j = np.arange(S)
    best, best_shift = 1.0, 0
    for shift in range(S):
        l = (j - shift) % S  # column j of roll(b, shift) is column j - shift of b
        valid = (na > 0) & (nb[l] > 0)
        if not valid.any():
            continue
        d = 1.0 - float(np.mean(G[j[valid], l[valid]]))
        if d < best - 1e-15:
            best, best_shift = d, shift
    return max(0.0, best), best_shift


# -- keypoints and local descriptors -------------------------------------------------

def detect_keypoints(cloud: PointCloud, budget: int = 128, resolution: float = 1.0) -> NDArray:
    """Centroids of the ``budget`` most populated voxels; ties by ascending voxel key."""
    if budget < 1:
        raise InvalidArgument("keypoint budget must be >= 1")
    if len(cloud) == 0:
        return np.zeros((0, 3))
    keys = voxel_keys(cloud.points, resolution)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, cloud.points)
    # np.unique sorts keys lexicographically, so a stable sort on -count keeps key order on ties
    order = np.argsort(-counts, kind="stable")[:budget]
    return sums[order] / counts[order, None]


ELEV_BINS = 8
RADIAL_BINS = 8
HEIGHT_BINS = 64


def baseline_local_descriptor(
    cloud: PointCloud, position: ArrayLike, radius: float = 2.0, index: SpatialIndex | None = None
) -> NDArray:
    """128-d yaw-invariant neighbourhood histogram.

    First 64 entries: occupancy over (elevation angle × radial distance),
    8 × 8 bins. Last 64: distribution of relative height over
    ``[-radius, radius]``. Each half is normalised, then the whole vector.
    An empty neighbourhood yields the zero vector, which marks the keypoint
    invalid for matching.
    """
    if radius <= 0:
        raise InvalidArgument("descriptor radius must be positive")
    c = np.asarray(position, dtype=np.float64).reshape(3)
    if index is None:
        d2 = np.sum((cloud.points - c) ** 2, axis=1)
        members = np.flatnonzero(d2 <= radius * radius)
    else:
        members = index.radius(c, radius)
    if members.size == 0:
        return np.zeros(LOCAL_DIM)
    rel = cloud.points[members] - c
    rad = np.linalg.norm(rel, axis=1)
    elev = np.arctan2(rel[:, 2], np.hypot(rel[:, 0], rel[:, 1]))
    eb = np.clip(np.floor((elev + math.pi / 2) / math.pi * ELEV_BINS), 0, ELEV_BINS - 1).astype(np.int64)
    rb = np.clip(np.floor(rad / radius * RADIAL_BINS), 0, RADIAL_BINS - 1).astype(np.int64)
    occ = np.bincount(eb * RADIAL_BINS + rb, minlength=ELEV_BINS * RADIAL_BINS).astype(np.float64)
    hb = np.clip(np.floor((rel[:, 2] + radius) / (2 * radius) * HEIGHT_BINS), 0, HEIGHT_BINS - 1).astype(np.int64)
    hist = np.bincount(hb, minlength=HEIGHT_BINS).astype(np.float64)
    v = np.concatenate([occ / np.linalg.norm(occ), hist / np.linalg.norm(hist)])
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class DescriptorSettings:
    keypoint_budget: int = 128
    local_radius: float = 2.0
    gem_p: float = GEM_P


def describe_submap(cloud: PointCloud, settings: DescriptorSettings = DescriptorSettings()) -> tuple[GlobalDescriptor, Keypoints]:
    """Baseline provider: keypoints, local descriptors, and a 256-d global descriptor.

    The global vector concatenates GeM pools of local descriptors taken at
    one and two times the local radius.
    """
    positions = detect_keypoints(cloud, settings.keypoint_budget)
    if positions.shape[0] == 0:
        raise InvalidArgument("cannot describe an empty submap")
    index = SpatialIndex(cloud.points)
    near = np.array([baseline_local_descriptor(cloud, p, settings.local_radius, index) for p in positions])
    wide = np.array([baseline_local_descriptor(cloud, p, 2 * settings.local_radius, index) for p in positions])
    kps = Keypoints(positions, near)
    ok = kps.valid
    g = np.concatenate([gem_pool(near[ok], settings.gem_p), gem_pool(wide[ok], settings.gem_p)])
    return GlobalDescriptor(g), kps
