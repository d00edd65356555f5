"""Pinhole camera model and the plain-text calibration file."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .. import io
from ..errors import FormatError, InvalidArgument
from ..geometry import RigidTransform

MIN_DEPTH = 0.1

# lidar x-forward / y-left / z-up  ->  camera z-forward / x-right / y-down
LIDAR_TO_OPTICAL = RigidTransform.from_matrix(np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]))


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    lidar_to_camera: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgument("principal point must lie inside the image")

    def project(self, points: ArrayLike, pose: RigidTransform | None = None, min_depth: float = MIN_DEPTH):
        """Project points given in a cloud frame into pixel coordinates.

        ``pose`` maps the cloud frame into the query lidar frame; the chain is
        ``lidar_to_camera ∘ pose``. Returns ``(uv, depth, valid)`` where
        ``valid`` requires depth > ``min_depth`` and ``uv`` inside [0,W)×[0,H).
        """
        T = self.lidar_to_camera if pose is None else self.lidar_to_camera.compose(pose)
        pc = T.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        z = pc[:, 2]
        front = z > min_depth
        safe = np.where(front, z, 1.0)
        uv = np.stack([self.fx * pc[:, 0] / safe + self.cx, self.fy * pc[:, 1] / safe + self.cy], axis=1)
        inside = (uv[:, 0] >= 0) & (uv[:, 0] < self.width) & (uv[:, 1] >= 0) & (uv[:, 1] < self.height)
        return uv, z, front & inside

    def save(self, path: str | Path) -> None:
        lines = [
            f"fx = {io.hexf(self.fx)}",
            f"fy = {io.hexf(self.fy)}",
            f"cx = {io.hexf(self.cx)}",
            f"cy = {io.hexf(self.cy)}",
            f"width = {self.width}",
            f"height = {self.height}",
            f"lidar_to_camera = {io.format_transform(self.lidar_to_camera)}",
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> CameraModel:
        p = str(path)
        values: dict[str, str] = {}
        for lineno, raw in enumerate(Path(p).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("expected 'key = value'", p, lineno)
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in {"fx", "fy", "cx", "cy", "width", "height", "lidar_to_camera"}:
                raise FormatError(f"unknown calibration key {k!r}", p, lineno)
            values[k] = v
        missing = {"fx", "fy", "cx", "cy", "width", "height", "lidar_to_camera"} - values.keys()
        if missing:
            raise FormatError(f"missing calibration keys: {sorted(missing)}", p)
        try:
            return cls(
                fx=io.parse_float(values["fx"]),
                fy=io.parse_float(values["fy"]),
                cx=io.parse_float(values["cx"]),
                cy=io.parse_float(values["cy"]),
                width=int(values["width"]),
                height=int(values["height"]),
                lidar_to_camera=io.parse_transform(values["lidar_to_camera"].split()),
            )
        except (ValueError, InvalidArgument) as exc:
            raise FormatError(f"bad calibration value: {exc}", p) from exc


def pixel_of(uv: NDArray) -> tuple[NDArray, NDArray]:
    """(row, col) integer pixel indices for in-image projections."""
    return np.floor(uv[:, 1]).astype(np.int64), np.floor(uv[:, 0]).astype(np.int64)
