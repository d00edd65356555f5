"""Binary point-cloud / feature blobs, PPM images, calibration files, hex floats.

R3PC layout (little-endian)::

    b"R3PC" | u32 N | N*3 float32 (x, y, z) [| R3FT block]

R3FT layout::

    b"R3FT" | u32 rows | u32 dim | rows*dim float32, row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import FormatError, InvalidArgument
from .geometry import PointCloud, RigidTransform

PathLike = str | os.PathLike

CLOUD_MAGIC = b"R3PC"
FEATURE_MAGIC = b"R3FT"


# -- hexadecimal floats ------------------------------------------------------

def hexf(x: float) -> str:
    return float(x).hex()


def parse_float(token: str) -> float:
    """Accept both ``float.hex`` literals and plain decimal notation."""
    t = token.strip()
    if "0x" in t.lower() or "inf" in t.lower() or "nan" in t.lower():
        return float.fromhex(t)
    return float(t)


def format_transform(t: RigidTransform) -> str:
    return " ".join(hexf(v) for v in t.as_vector())


def parse_transform(tokens: list[str]) -> RigidTransform:
    if len(tokens) != 7:
        raise InvalidArgument(f"expected 7 floats for a transform, got {len(tokens)}")
    return RigidTransform.from_vector([parse_float(x) for x in tokens])


# -- R3FT / R3PC ----------------------------------------------------------------

def _feature_block(matrix: NDArray) -> bytes:
    m = np.ascontiguousarray(np.asarray(matrix, dtype="<f4"))
    if m.ndim != 2:
        raise InvalidArgument(f"feature matrix must be 2-d, got shape {m.shape}")
    return FEATURE_MAGIC + struct.pack("<II", m.shape[0], m.shape[1]) + m.tobytes()


def _parse_feature_block(buf: bytes, start: int, path: str | None) -> tuple[NDArray, int]:
    if buf[start:start + 4] != FEATURE_MAGIC:
        raise FormatError("bad feature magic", path, start)
    if len(buf) < start + 12:
        raise FormatError("truncated feature header", path, len(buf))
    rows, dim = struct.unpack_from("<II", buf, start + 4)
    body = start + 12
    end = body + 4 * rows * dim
    if len(buf) < end:
        raise FormatError(f"truncated feature payload: need {end - body} bytes", path, len(buf))
    m = np.frombuffer(buf, dtype="<f4", count=rows * dim, offset=body).reshape(rows, dim)
    bad = np.flatnonzero(~np.isfinite(m.reshape(-1)))
    if bad.size:
        raise FormatError("non-finite feature value", path, body + 4 * int(bad[0]))
    return m.astype(np.float32), end


def write_features(path: PathLike, matrix: ArrayLike) -> None:
    Path(path).write_bytes(_feature_block(np.asarray(matrix)))


def load_features(path: PathLike) -> NDArray:
    """Read an R3FT matrix. Values round-trip bit-exactly as float32."""
    p = str(path)
    try:
        buf = Path(p).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read: {exc.strerror}", p) from exc
    if len(buf) < 4:
        raise FormatError("truncated magic", p, len(buf))
    m, end = _parse_feature_block(buf, 0, p)
    if end != len(buf):
        raise FormatError("trailing bytes after feature payload", p, end)
    return m


def write_cloud(path: PathLike, cloud: PointCloud) -> None:
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    blob = CLOUD_MAGIC + struct.pack("<I", pts.shape[0]) + pts.tobytes()
    if cloud.features is not None:
        blob += _feature_block(cloud.features)
    Path(path).write_bytes(blob)


def read_cloud(path: PathLike) -> PointCloud:
    p = str(path)
    try:
        buf = Path(p).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read: {exc.strerror}", p) from exc
    if buf[:4] != CLOUD_MAGIC:
        raise FormatError("bad cloud magic", p, 0)
    if len(buf) < 8:
        raise FormatError("truncated point count", p, len(buf))
    (n,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 12 * n
    if len(buf) < end:
        raise FormatError(f"truncated point payload: need {12 * n} bytes", p, len(buf))
    pts = np.frombuffer(buf, dtype="<f4", count=3 * n, offset=8).reshape(n, 3)
    bad = np.flatnonzero(~np.isfinite(pts.reshape(-1)))
    if bad.size:
        raise FormatError("non-finite coordinate", p, 8 + 4 * int(bad[0]))
    feats = None
    if len(buf) > end:
        feats, fend = _parse_feature_block(buf, end, p)
        if feats.shape[0] != n:
            raise FormatError(f"feature rows {feats.shape[0]} != point count {n}", p, end + 4)
        if fend != len(buf):
            raise FormatError("trailing bytes after feature block", p, fend)
    return PointCloud(pts.astype(np.float64), None if feats is None else feats.astype(np.float64))


# -- images ----------------------------------------------------------------------

def _ppm_tokens(buf: bytes, count: int, path: str) -> tuple[list[bytes], int]:
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PPM header", path, i)
        tokens.append(buf[i:j])
        i = j
    return tokens, i + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path: PathLike) -> NDArray:
    """Binary (P6) portable pixmap -> H x W x 3 uint8."""
    p = str(path)
    buf = Path(p).read_bytes()
    tokens, start = _ppm_tokens(buf, 4, p)
    if tokens[0] != b"P6":
        raise FormatError("only binary P6 pixmaps are supported", p, 0)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer PPM header field", p, 2) from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}", p, start)
    if len(buf) < start + w * h * 3:
        raise FormatError("truncated PPM raster", p, len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=start).reshape(h, w, 3).copy()


def write_ppm(path: PathLike, image: ArrayLike) -> None:
    img = np.ascontiguousarray(np.asarray(image, dtype=np.uint8))
    h, w, c = img.shape
    if c != 3:
        raise InvalidArgument("PPM needs 3 channels")
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_image(path: PathLike) -> NDArray:
    p = Path(path)
    with open(p, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P6":
        return read_ppm(p)
    from PIL import Image  # other containers are optional

    try:
        with Image.open(p) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as exc:  # PIL raises a zoo of types
        raise FormatError(f"unreadable image: {exc}", str(p)) from exc
