"""Per-point and per-pixel feature providers for cross-modal verification.

``BaselineProvider`` stands in for a distilled 2D/3D network pair: both
modalities are encoded with the same colour RBF bank, pixels from the image
and points from a colourised cloud (3 feature columns, RGB in [0, 1]).
``FileProvider`` passes precomputed embeddings through unchanged.
"""

from __future__ import annotations

from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from numpy.typing import NDArray

from .. import io
from ..errors import FormatError, InvalidArgument
from ..geometry import PointCloud


@runtime_checkable
class FeatureProvider(Protocol):
    def point_features(self, cloud: PointCloud) -> NDArray: ...

    def image_features(self, image: NDArray) -> NDArray: ...


class ColourEncoder:
    """Gaussian RBF responses of an RGB colour against a regular anchor grid."""

    def __init__(self, dim: int = 64, sigma: float = 0.15):
        side = round(dim ** (1 / 3))
        if side ** 3 != dim or side < 2:
            raise InvalidArgument(f"colour feature dim must be a cube >= 8, got {dim}")
        ticks = (np.arange(side) + 0.5) / side
        g = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
        self.anchors = g
        self.dim = dim
        self.sigma = sigma

    def __call__(self, rgb: NDArray) -> NDArray:
        c = np.asarray(rgb, dtype=np.float64).reshape(-1, 3)
        d2 = np.sum(c * c, 1)[:, None] + np.sum(self.anchors ** 2, 1)[None, :] - 2 * c @ self.anchors.T
        return np.exp(-np.maximum(d2, 0.0) / (2 * self.sigma ** 2))


class BaselineProvider:
    def __init__(self, dim: int = 64, sigma: float = 0.15, stride: int = 1):
        self.encoder = ColourEncoder(dim, sigma)
        self.dim = dim
        self.stride = stride

    def point_features(self, cloud: PointCloud) -> NDArray:
        if cloud.feature_dim == 3:
            return self.encoder(cloud.features)
        if cloud.feature_dim == self.dim:
            return np.asarray(cloud.features, dtype=np.float64)
        raise InvalidArgument(
            f"baseline provider needs RGB (3) or {self.dim}-d point features, cloud has {cloud.feature_dim}"
        )

    def image_features(self, image: NDArray) -> NDArray:
        img = np.asarray(image)
        s = self.stride
        small = img[s // 2::s, s // 2::s] if s > 1 else img
        h, w = small.shape[:2]
        return self.encoder(small.reshape(-1, 3) / 255.0).reshape(h, w, self.dim)


class FileProvider:
    """Precomputed embeddings: point features from the cloud's R3FT block,
    pixel features from a separate R3FT file holding an H'×W' grid (row-major)."""

    def __init__(self, image_features_path: str | Path | None = None):
        self.image_features_path = image_features_path

    def point_features(self, cloud: PointCloud) -> NDArray:
        if cloud.features is None:
            raise InvalidArgument("file provider needs a cloud with an R3FT feature block")
        return np.asarray(cloud.features, dtype=np.float64)

    def image_features(self, image: NDArray) -> NDArray:
        if self.image_features_path is None:
            raise InvalidArgument("file provider has no image feature file")
        m = io.load_features(self.image_features_path).astype(np.float64)
        h, w = np.asarray(image).shape[:2]
        for s in range(1, min(h, w) + 1):
            if h % s == 0 and w % s == 0 and (h // s) * (w // s) == m.shape[0]:
                return m.reshape(h // s, w // s, m.shape[1])
        raise FormatError(
            f"{m.shape[0]} feature rows do not tile a {h}x{w} image at any integer stride",
            str(self.image_features_path),
        )


def sample_grid(grid: NDArray, rows: NDArray, cols: NDArray, height: int, width: int) -> NDArray:
    """Look up per-pixel features on a possibly downscaled grid."""
    gh, gw = grid.shape[:2]
    r = np.minimum(rows * gh // height, gh - 1)
    c = np.minimum(cols * gw // width, gw - 1)
    return grid[r, c]
