"""Keypoint matching, RANSAC pose estimation, ICP refinement and success scoring.

All transforms follow one convention: the estimate maps query-frame
coordinates into the candidate (top-1 submap) frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .descriptors import Keypoints
from .errors import DegenerateConfiguration, InsufficientData, InvalidArgument, NoConsensus, NoOverlap
from .geometry import PointCloud, RigidTransform, SpatialIndex, kabsch_fit, voxel_downsample


@dataclass(frozen=True)
class CorrespondenceSet:
    """Parallel arrays: query index, candidate index, descriptor distance."""

    query: NDArray
    candidate: NDArray
    distance: NDArray

    def __post_init__(self) -> None:
        if np.unique(self.query).size != self.query.size:
            raise InvalidArgument("each query keypoint may appear in at most one correspondence")

    def __len__(self) -> int:
        return int(self.query.shape[0])

    @classmethod
    def from_pairs(cls, pairs) -> CorrespondenceSet:
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0))
        q, c, d = zip(*pairs)
        return cls(np.asarray(q, np.int64), np.asarray(c, np.int64), np.asarray(d, np.float64))


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    inlier_count: int
    inlier_rms: float
    converged: bool
    icp_iterations: int = 0
    ransac_iterations: int = 0
    mse_history: tuple[float, ...] = ()


def match_keypoints(query: Keypoints, candidate: Keypoints, lowe_ratio: float = 0.95) -> CorrespondenceSet:
    """Mutual nearest neighbours in descriptor space that pass the ratio test."""
    qv, cv = np.flatnonzero(query.valid), np.flatnonzero(candidate.valid)
    if qv.size == 0 or cv.size == 0:
        return CorrespondenceSet.from_pairs([])
    Q = query.descriptors[qv].astype(np.float64)
    C = candidate.descriptors[cv].astype(np.float64)
    D = np.sqrt(np.maximum(np.sum(Q * Q, 1)[:, None] + np.sum(C * C, 1)[None, :] - 2 * Q @ C.T, 0.0))
    # argmin returns the first (lowest index) minimum, which fixes tie-breaking
    best_c = np.argmin(D, axis=1)
    best_q = np.argmin(D, axis=0)
    pairs = []
    for i, j in enumerate(best_c):
        if best_q[j] != i:
            continue
        d1 = D[i, j]
        if D.shape[1] > 1:
            d2 = np.partition(D[i], 1)[1]
            # d2 == 0 means two exact duplicates: ambiguous, reject
            if d2 == 0 or d1 / d2 > lowe_ratio:
                continue
        pairs.append((int(qv[i]), int(cv[j]), float(d1)))
    pairs.sort(key=lambda p: (p[2], p[0]))
    return CorrespondenceSet.from_pairs(pairs)


def _draw_samples(rng: np.random.Generator, n: int, count: int) -> NDArray:
    s = rng.integers(0, n, size=(count, 3))
    while True:
        bad = np.flatnonzero((s[:, 0] == s[:, 1]) | (s[:, 0] == s[:, 2]) | (s[:, 1] == s[:, 2]))
        if bad.size == 0:
            return s
        s[bad] = rng.integers(0, n, size=(bad.size, 3))


def _required_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    w3 = inlier_ratio ** 3
    if w3 >= 1.0:
        return 1
    if w3 <= 0.0:
        return cap
    return min(cap, max(1, math.ceil(math.log(1 - confidence) / math.log(1 - w3))))


def ransac_register(
    corr: CorrespondenceSet,
    query_pts: ArrayLike,
    cand_pts: ArrayLike,
    inlier_threshold: float = 0.5,
    max_iters: int = 10_000,
    seed: int = 42,
    confidence: float = 0.99,
) -> RegistrationResult:
    """RANSAC over 3-point Kabsch fits, refit on the winning inlier set.

    Samples are pre-drawn from ``seed`` so the result is bit-identical for
    a given seed. Hypotheses rank by (inlier count, -inlier rms, sample
    index); the iteration budget shrinks with the usual ``1 - w^3`` rule.
    """
    if inlier_threshold <= 0:
        raise InvalidArgument("inlier_threshold must be positive")
    n = len(corr)
    if n < 3:
        raise InsufficientData(f"RANSAC needs >= 3 correspondences, got {n}")
    src = np.asarray(query_pts, dtype=np.float64)[corr.query]
    dst = np.asarray(cand_pts, dtype=np.float64)[corr.candidate]
    samples = _draw_samples(np.random.default_rng(seed), n, max_iters)
    thr2 = inlier_threshold ** 2

    best: tuple[int, float] | None = None
    best_T = None
    best_mask = None
    budget = max_iters
    it = 0
    while it < budget:
        idx = samples[it]
        it += 1
        try:
            T = kabsch_fit(src[idx], dst[idx])
        except DegenerateConfiguration:
            continue
        r2 = np.sum((T.apply(src) - dst) ** 2, axis=1)
        mask = r2 < thr2
        cnt = int(mask.sum())
        if cnt < 3:
            continue
        rms = math.sqrt(float(r2[mask].mean()))
        if best is None or cnt > best[0] or (cnt == best[0] and rms < best[1]):
            best, best_T, best_mask = (cnt, rms), T, mask
            budget = _required_iterations(cnt / n, confidence, max_iters)
    if best is None:
        raise NoConsensus("no 3-point hypothesis gathered >= 3 inliers")

    T, mask = best_T, best_mask
    try:
        refit = kabsch_fit(src[mask], dst[mask])
        r2 = np.sum((refit.apply(src) - dst) ** 2, axis=1)
        m2 = r2 < thr2
        if m2.sum() >= mask.sum():
            T, mask = refit, m2
    except DegenerateConfiguration:
        pass
    r2 = np.sum((T.apply(src) - dst) ** 2, axis=1)
    return RegistrationResult(
        transform=T,
        inlier_count=int(mask.sum()),
        inlier_rms=math.sqrt(float(r2[mask].mean())),
        converged=True,
        ransac_iterations=it,
    )


def icp_refine(
    query: PointCloud,
    candidate: PointCloud,
    initial: RigidTransform,
    resolution: float = 0.4,
    max_corr_dist: float = 1.0,
    max_iters: int = 50,
    tolerance: float = 1e-6,
) -> RegistrationResult:
    """Point-to-point ICP on voxel-downsampled clouds.

    The tracked error is the truncated mean ``mean(min(d^2, max_corr_dist^2))``
    over all query points. With reassignment to nearest neighbours and a
    least-squares refit on the in-range pairs this objective cannot grow, so
    ``mse_history`` is non-increasing.
    """
    if len(query) == 0 or len(candidate) == 0:
        raise InvalidArgument("ICP needs non-empty clouds")
    src = voxel_downsample(query, resolution).points
    tgt = voxel_downsample(candidate, resolution).points
    index = SpatialIndex(tgt)
    c2 = max_corr_dist ** 2

    def evaluate(T: RigidTransform):
        moved = T.apply(src)
        d, j = index.nearest(moved, max_distance=max_corr_dist)
        inl = np.isfinite(d)
        err = float(np.mean(np.where(inl, d * d, c2)))
        return moved, d, j, inl, err

    T = initial
    moved, d, j, inl, err = evaluate(T)
    if not inl.any():
        raise NoOverlap(f"no correspondences within {max_corr_dist} m at the initial pose")
    history = [err]
    converged = False
    iters = 0
    for _ in range(max_iters):
        if inl.sum() < 3:
            break
        try:
            delta = kabsch_fit(moved[inl], tgt[j[inl]])
        except DegenerateConfiguration:
            break
        iters += 1
        T_new = delta.compose(T)
        m_new, d_new, j_new, inl_new, err_new = evaluate(T_new)
        if err_new > err:
            # only reachable through round-off; keep the better pose
            converged = True
            break
        history.append(err_new)
        improvement = err - err_new
        T, moved, d, j, inl, err = T_new, m_new, d_new, j_new, inl_new, err_new
        if improvement < tolerance:
            converged = True
            break
    rms = math.sqrt(float(np.mean(d[inl] ** 2))) if inl.any() else float("inf")
    return RegistrationResult(
        transform=T,
        inlier_count=int(inl.sum()),
        inlier_rms=rms,
        converged=converged,
        icp_iterations=iters,
        mse_history=tuple(history),
    )


def pose_error(estimate: RigidTransform, truth: RigidTransform) -> tuple[float, float]:
    """(rotation error in degrees, translation error in meters)."""
    return estimate.distance_to(truth)


# float slack when a tolerance is hit exactly by an angle recovered from a quaternion
_ANGLE_EPS_DEG = 1e-9


def registration_success(
    estimate: RigidTransform, truth: RigidTransform, rot_tol: float = 5.0, trans_tol: float = 2.0
) -> bool:
    """Both errors within tolerance, boundary inclusive."""
    if rot_tol <= 0 or trans_tol <= 0:
        raise InvalidArgument("tolerances must be positive")
    rot, trans = pose_error(estimate, truth)
    return rot <= rot_tol + _ANGLE_EPS_DEG and trans <= trans_tol
