"""Lidar-camera re-localisation in prior maps: place recognition,
registration, cross-modal verification and pose-graph merging."""

from .errors import R3LocError
from .geometry import PointCloud, RigidTransform

__version__ = "0.1.0"
__all__ = ["PointCloud", "R3LocError", "RigidTransform", "__version__"]
