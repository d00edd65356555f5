"""Cross-modal hypothesis verification (image vs. candidate submap)."""

from __future__ import annotations

import time
from typing import MutableMapping

import numpy as np
from numpy.typing import NDArray

from ..errors import EmptyOverlap
from ..geometry import PointCloud, RigidTransform
from .camera import MIN_DEPTH, CameraModel
from .features import BaselineProvider, FeatureProvider, FileProvider
from .metrics import (
    SimilarityMatrix,
    SuperpointSet,
    VerificationFeatures,
    alignment_ratio,
    build_superpoints,
    cosine_similarity,
    mean_cosine_similarity,
    similarity_matrix,
)
from .slic import MAX_SUPERPIXELS, SuperpixelSet, slic_segment
from .svc import CLASSES, SvcModel, kkt_audit, svc_predict, svc_train

__all__ = [
    "CLASSES",
    "BaselineProvider",
    "CameraModel",
    "FeatureProvider",
    "FileProvider",
    "SimilarityMatrix",
    "SuperpixelSet",
    "SuperpointSet",
    "SvcModel",
    "VerificationFeatures",
    "alignment_ratio",
    "build_superpoints",
    "cosine_similarity",
    "kkt_audit",
    "mean_cosine_similarity",
    "measure",
    "similarity_matrix",
    "slic_segment",
    "svc_predict",
    "svc_train",
    "verify",
]

EMPTY = VerificationFeatures(mcs=0.0, alignment_ratio=0.0, pair_count=0, mismatch_count=0)


class _Stopwatch:
    def __init__(self, sink: MutableMapping[str, float] | None):
        self.sink = sink
        self.t = time.perf_counter()

    def lap(self, name: str) -> None:
        now = time.perf_counter()
        if self.sink is not None:
            self.sink[name] = self.sink.get(name, 0.0) + (now - self.t)
        self.t = now


def measure(
    image: NDArray,
    cloud: PointCloud,
    pose: RigidTransform,
    camera: CameraModel,
    provider: FeatureProvider,
    *,
    superpixels: SuperpixelSet | None = None,
    target_count: int = MAX_SUPERPIXELS,
    compactness: float = 10.0,
    iterations: int = 10,
    top_k: int = 5,
    min_depth: float = MIN_DEPTH,
    timings: MutableMapping[str, float] | None = None,
) -> VerificationFeatures:
    """Compute (MCS, nu) for one hypothesis; raises EmptyOverlap.

    ``pose`` maps candidate-cloud coordinates into the query lidar frame.
    Pass precomputed ``superpixels`` (with or without features) to reuse
    segmentation across hypotheses for the same image.
    """
    sw = _Stopwatch(timings)
    img = np.asarray(image)
    if img.shape[:2] != (camera.height, camera.width):
        raise ValueError(f"image is {img.shape[1]}x{img.shape[0]}, calibration says {camera.width}x{camera.height}")
    sp = superpixels if superpixels is not None else slic_segment(img, target_count, compactness, iterations)
    sw.lap("superpixel")
    if sp.features is None:
        sp = sp.with_features(provider.image_features(img))
    cloud = PointCloud(cloud.points, provider.point_features(cloud))
    sw.lap("features")
    spts = build_superpoints(cloud, pose, camera, sp, min_depth)
    sim = similarity_matrix(sp, spts)
    sw.lap("mcs")
    feats = alignment_ratio(sp, spts, sim, pose, camera, top_k, min_depth)
    sw.lap("verification")
    return feats


def verify(
    image: NDArray,
    cloud: PointCloud,
    pose: RigidTransform,
    camera: CameraModel,
    provider: FeatureProvider,
    model: SvcModel,
    **kwargs,
) -> tuple[str, VerificationFeatures]:
    """Classify a hypothesis as matched / mismatched / unmatched.

    An empty overlap yields ``unmatched`` with L = 0.
    """
    timings = kwargs.get("timings")
    try:
        feats = measure(image, cloud, pose, camera, provider, **kwargs)
    except EmptyOverlap:
        return "unmatched", EMPTY
    t = time.perf_counter()
    label = svc_predict(model, feats)
    if timings is not None:
        timings["verification"] = timings.get("verification", 0.0) + time.perf_counter() - t
    return label, feats
