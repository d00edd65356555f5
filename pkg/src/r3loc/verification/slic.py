"""SLIC superpixels: k-means over (L, a, b, x, y) with grid seeding and
connectivity enforcement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import ndimage
from skimage.color import rgb2lab

from ..errors import InvalidArgument

MAX_SUPERPIXELS = 250


@dataclass(frozen=True, eq=False)
class SuperpixelSet:
    """Label image (contiguous labels 0..n-1) with per-label pixel centroids.

    ``centroids[i]`` is (u, v) = (x, y) in pixels, measured at pixel
    centres. ``features`` is filled by :meth:`with_features`.
    """

    labels: NDArray
    centroids: NDArray
    features: NDArray | None = None

    @property
    def count(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape  # type: ignore[return-value]

    def with_features(self, feature_grid: NDArray) -> SuperpixelSet:
        """Average-pool a per-pixel (possibly downscaled) feature grid per label."""
        from .features import sample_grid

        h, w = self.labels.shape
        rows, cols = np.indices((h, w))
        per_pixel = sample_grid(np.asarray(feature_grid, dtype=np.float64), rows.ravel(), cols.ravel(), h, w)
        lab = self.labels.ravel()
        sums = np.zeros((self.count, per_pixel.shape[1]))
        np.add.at(sums, lab, per_pixel)
        counts = np.bincount(lab, minlength=self.count)
        return SuperpixelSet(self.labels, self.centroids, sums / np.maximum(counts, 1)[:, None])


def _grid(h: int, w: int, k: int) -> tuple[int, int]:
    step = math.sqrt(h * w / k)
    nx = max(1, int(round(w / step)))
    ny = max(1, int(round(h / step)))
    while nx * ny > k:
        if w / nx < h / ny:
            ny -= 1
        else:
            nx -= 1
    return ny, nx


def _seed(lab: NDArray, y: float, x: float) -> tuple[float, float]:
    """Move a grid seed to the lowest-gradient pixel of its 3x3 neighbourhood,
    staying put unless a neighbour is strictly smoother."""
    h, w = lab.shape[:2]

    def grad(yy: int, xx: int) -> float:
        return float(
            np.sum((lab[yy, xx + 1] - lab[yy, xx - 1]) ** 2) + np.sum((lab[yy + 1, xx] - lab[yy - 1, xx]) ** 2)
        )

    y0, x0 = int(round(y)), int(round(x))
    if not (1 <= y0 < h - 1 and 1 <= x0 < w - 1):
        return y, x
    best, pos = grad(y0, x0), (y, x)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            yy, xx = y0 + dy, x0 + dx
            if (dy or dx) and 1 <= yy < h - 1 and 1 <= xx < w - 1:
                g = grad(yy, xx)
                if g < best - 1e-9:
                    best, pos = g, (float(yy), float(xx))
    return pos


def slic_segment(
    image: NDArray, target_count: int = MAX_SUPERPIXELS, compactness: float = 10.0, iterations: int = 10
) -> SuperpixelSet:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 2 or img.shape[1] < 2:
        raise InvalidArgument(f"expected an H x W x 3 image, got shape {img.shape}")
    if not 1 <= target_count <= MAX_SUPERPIXELS:
        raise InvalidArgument(f"target_count must be in [1, {MAX_SUPERPIXELS}], got {target_count}")
    h, w = img.shape[:2]
    lab = rgb2lab(img.astype(np.float64) / 255.0)
    ny, nx = _grid(h, w, target_count)
    sy, sx = h / ny, w / nx
    S = math.sqrt(sy * sx)
    wy, wx = int(math.ceil(sy)), int(math.ceil(sx))

    centers = []
    for i in range(ny):
        for j in range(nx):
            y, x = _seed(lab, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5)
            centers.append([*lab[int(round(y)), int(round(x))], y, x])
    C = np.array(centers)
    K = C.shape[0]
    labels = np.full((h, w), -1, dtype=np.int64)
    yy, xx = np.indices((h, w), dtype=np.float64)
    spatial_w = (compactness / S) ** 2

    for _ in range(iterations):
        dist = np.full((h, w), np.inf)
        for k in range(K):
            cy, cx = C[k, 3], C[k, 4]
            y0, y1 = max(0, int(math.floor(cy)) - wy), min(h, int(math.ceil(cy)) + wy + 1)
            x0, x1 = max(0, int(math.floor(cx)) - wx), min(w, int(math.ceil(cx)) + wx + 1)
            patch = lab[y0:y1, x0:x1]
            dc = np.sum((patch - C[k, :3]) ** 2, axis=2)
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            D = dc + spatial_w * ds
            cur = dist[y0:y1, x0:x1]
            better = D < cur
            cur[better] = D[better]
            labels[y0:y1, x0:x1][better] = k
        flat = labels.ravel()
        ok = flat >= 0
        counts = np.bincount(flat[ok], minlength=K)
        feats = np.concatenate([lab.reshape(-1, 3), yy.reshape(-1, 1), xx.reshape(-1, 1)], axis=1)[ok]
        sums = np.zeros((K, 5))
        np.add.at(sums, flat[ok], feats)
        nz = counts > 0
        C[nz] = sums[nz] / counts[nz, None]

    labels = _enforce_connectivity(labels, lab, C, spatial_w)
    return _finalise(labels)


def _enforce_connectivity(labels: NDArray, lab: NDArray, C: NDArray, spatial_w: float) -> NDArray:
    """Keep the largest connected component of each label; merge every other
    component (and unassigned pixels) into the adjacent label whose cluster
    centre is nearest in the SLIC distance."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    comp_label: list[int] = []
    keep: list[bool] = []
    n_comp = 0
    for k in np.unique(labels):
        mask = labels == k
        cc, n = ndimage.label(mask)
        sizes = np.bincount(cc.ravel(), minlength=n + 1)[1:]
        largest = int(np.argmax(sizes))
        comp[mask] = cc[mask] - 1 + n_comp
        for i in range(n):
            comp_label.append(int(k))
            keep.append(bool(k >= 0 and i == largest))
        n_comp += n
    comp_label_arr = np.array(comp_label)
    keep_arr = np.array(keep)

    # component adjacency over 4-neighbourhood
    pairs = np.concatenate(
        [
            np.stack([comp[:, :-1].ravel(), comp[:, 1:].ravel()], 1),
            np.stack([comp[:-1, :].ravel(), comp[1:, :].ravel()], 1),
        ]
    )
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.concatenate([pairs, pairs[:, ::-1]]), axis=0)
    neighbours: dict[int, list[int]] = {}
    for a, b in pairs:
        neighbours.setdefault(int(a), []).append(int(b))

    flat_comp = comp.ravel()
    counts = np.bincount(flat_comp, minlength=n_comp)
    feats = np.concatenate([lab.reshape(-1, 3), np.indices((h, w)).reshape(2, -1).T.astype(np.float64)], axis=1)
    sums = np.zeros((n_comp, 5))
    np.add.at(sums, flat_comp, feats)
    means = sums / counts[:, None]

    final = comp_label_arr.copy()
    resolved = keep_arr.copy()
    pending = [int(i) for i in np.flatnonzero(~resolved)]
    while pending:
        progressed = False
        rest = []
        for c in pending:
            adj = sorted({final[n] for n in neighbours.get(c, []) if resolved[n]})
            if not adj:
                rest.append(c)
                continue
            cand = np.array(adj)
            d = np.sum((C[cand, :3] - means[c, :3]) ** 2, 1) + spatial_w * np.sum((C[cand, 3:] - means[c, 3:]) ** 2, 1)
            final[c] = int(cand[int(np.argmin(d))])
            resolved[c] = True
            progressed = True
        if not progressed:
            # isolated orphans with no resolved neighbour: only possible if no label was kept
            for c in rest:
                final[c] = 0
                resolved[c] = True
            break
        pending = rest
    return final[comp]


def _finalise(labels: NDArray) -> SuperpixelSet:
    h, w = labels.shape
    flat = labels.ravel()
    # relabel contiguously in raster order of first appearance
    uniq, first = np.unique(flat, return_index=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(uniq.size)
    new = rank[np.searchsorted(uniq, flat)]
    rows, cols = np.indices((h, w))
    n = uniq.size
    counts = np.bincount(new, minlength=n)
    cu = np.bincount(new, weights=cols.ravel() + 0.5, minlength=n) / counts
    cv = np.bincount(new, weights=rows.ravel() + 0.5, minlength=n) / counts
    return SuperpixelSet(new.reshape(h, w), np.stack([cu, cv], axis=1))
