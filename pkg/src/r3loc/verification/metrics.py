"""Superpoints, cosine-similarity matrix, mean cosine similarity and the
alignment ratio used to score an image / point-cloud pose hypothesis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..errors import EmptyOverlap, InvalidArgument
from ..geometry import PointCloud, RigidTransform
from .camera import MIN_DEPTH, CameraModel, pixel_of
from .slic import SuperpixelSet

TOP_K = 5


@dataclass(frozen=True, eq=False)
class SuperpointSet:
    """Groups of cloud points keyed by the superpixel they project into.

    ``labels`` is ascending; ``members[i]``, ``centroids[i]`` (cloud frame)
    and ``features[i]`` (mean member feature, L2-normalised) belong to
    superpixel ``labels[i]``.
    """

    labels: NDArray
    members: tuple[NDArray, ...]
    centroids: NDArray
    features: NDArray

    def __len__(self) -> int:
        return int(self.labels.shape[0])


@dataclass(frozen=True)
class VerificationFeatures:
    mcs: float
    alignment_ratio: float
    pair_count: int
    mismatch_count: int

    @property
    def nu(self) -> float:
        return self.alignment_ratio


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Square cosine matrix; row i and column i both refer to superpixel ``labels[i]``.

    ``zero_norm`` flags entries forced to 0 because a feature had zero norm.
    """

    values: NDArray
    labels: NDArray
    zero_norm: NDArray

    @property
    def diagonal(self) -> NDArray:
        return np.diag(self.values)


def build_superpoints(
    cloud: PointCloud,
    pose: RigidTransform,
    camera: CameraModel,
    superpixels: SuperpixelSet,
    min_depth: float = MIN_DEPTH,
) -> SuperpointSet:
    """Group cloud points by the superpixel their projection lands in.

    ``pose`` maps cloud-frame coordinates into the query lidar frame.
    """
    if cloud.features is None:
        raise InvalidArgument("build_superpoints needs per-point features")
    uv, _, valid = camera.project(cloud.points, pose, min_depth)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        raise EmptyOverlap("no point projects into the image")
    rows, cols = pixel_of(uv[idx])
    lab = superpixels.labels[rows, cols]
    order = np.lexsort((idx, lab))
    lab, idx = lab[order], idx[order]
    labels, starts = np.unique(lab, return_index=True)
    groups = np.split(idx, starts[1:])
    feats = np.asarray(cloud.features, dtype=np.float64)
    centroids = np.array([cloud.points[g].mean(axis=0) for g in groups])
    pooled = np.array([feats[g].mean(axis=0) for g in groups])
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    pooled = np.where(norms > 0, pooled / np.where(norms > 0, norms, 1.0), 0.0)
    return SuperpointSet(labels.astype(np.int64), tuple(groups), centroids, pooled)


def cosine_similarity(F: ArrayLike, G: ArrayLike) -> tuple[NDArray, NDArray]:
    """cs_ij = <f_i, g_j> / (|f_i| |g_j|); zero-norm entries are 0 and flagged."""
    F = np.asarray(F, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    if F.ndim != 2 or G.ndim != 2 or F.shape[1] != G.shape[1]:
        raise InvalidArgument(f"feature dimensions differ: {F.shape} vs {G.shape}")
    nf = np.linalg.norm(F, axis=1)
    ng = np.linalg.norm(G, axis=1)
    denom = np.outer(nf, ng)
    zero = denom == 0
    cs = np.where(zero, 0.0, (F @ G.T) / np.where(zero, 1.0, denom))
    return np.clip(cs, -1.0, 1.0), zero


def similarity_matrix(superpixels: SuperpixelSet, superpoints: SuperpointSet) -> SimilarityMatrix:
    if superpixels.features is None:
        raise InvalidArgument("superpixels carry no pooled features")
    if len(superpoints) == 0:
        raise EmptyOverlap("no superpoints")
    F = superpixels.features[superpoints.labels]
    cs, zero = cosine_similarity(F, superpoints.features)
    return SimilarityMatrix(cs, superpoints.labels, zero)


def mean_cosine_similarity(m: SimilarityMatrix | ArrayLike) -> float:
    values = m.values if isinstance(m, SimilarityMatrix) else np.asarray(m, dtype=np.float64)
    if values.ndim != 2 or min(values.shape) == 0:
        raise EmptyOverlap("similarity matrix has no diagonal")
    return float(np.mean(np.diag(values)))


def _top_candidates(row: NDArray, k: int) -> NDArray:
    # stable sort on -similarity keeps the lower label first on ties (columns are label-ascending)
    return np.argsort(-row, kind="stable")[:k]


def alignment_ratio(
    superpixels: SuperpixelSet,
    superpoints: SuperpointSet,
    sim: SimilarityMatrix,
    pose: RigidTransform,
    camera: CameraModel,
    top_k: int = TOP_K,
    min_depth: float = MIN_DEPTH,
) -> VerificationFeatures:
    """Score geometric agreement between superpixels and their most similar superpoints.

    For each superpixel row: take the ``top_k`` most similar superpoints,
    project their centroids, keep the one landing nearest the superpixel's
    pixel centroid, and count a match if it lands inside that superpixel.
    A row whose candidates all fall behind the camera or off-image is a
    mismatch. Returns MCS, nu = 1 - n/L, L and n.
    """
    L = sim.values.shape[0]
    if L == 0:
        raise EmptyOverlap("no superpixel/superpoint pairs")
    uv, _, valid = camera.project(superpoints.centroids, pose, min_depth)
    rows, cols = pixel_of(np.where(valid[:, None], uv, 0.0))
    landed = np.where(valid, superpixels.labels[rows, cols], -1)
    n = 0
    for i in range(L):
        target = sim.labels[i]
        cand = _top_candidates(sim.values[i], top_k)
        cand = cand[valid[cand]]
        if cand.size == 0:
            n += 1
            continue
        d = np.linalg.norm(uv[cand] - superpixels.centroids[target], axis=1)
        best = cand[int(np.argmin(d))]
        if landed[best] != target:
            n += 1
    return VerificationFeatures(
        mcs=mean_cosine_similarity(sim),
        # (L - n) / L is the correctly rounded 1 - n/L and keeps nu*L + n == L exact
        alignment_ratio=(L - n) / L,
        pair_count=L,
        mismatch_count=n,
    )
