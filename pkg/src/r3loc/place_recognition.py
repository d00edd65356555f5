"""Prior-map submap database, top-K retrieval and Recall@K."""

from __future__ import annotations

import json
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import io
from .descriptors import GlobalDescriptor, Keypoints
from .errors import ConflictError, EmptyDatabase, FormatError, InvalidArgument
from .geometry import RigidTransform, SpatialIndex

INDEX_FILE = "index.jsonl"
BRUTE_FORCE_LIMIT = 1000


@dataclass(frozen=True, eq=False)
class SubmapRecord:
    id: int
    session: str
    root_pose: RigidTransform
    global_descriptor: GlobalDescriptor
    keypoints: Keypoints
    cloud_ref: str = ""


class SubmapDatabase:
    """Ordered submap records plus a descriptor index rebuilt on every insert.

    Retrieval may run concurrently; :meth:`insert` holds an exclusive lock
    while the index is rebuilt.
    """

    def __init__(self, records: Sequence[SubmapRecord] = ()):
        self._lock = threading.RLock()
        self._records: list[SubmapRecord] = []
        self._by_id: dict[int, SubmapRecord] = {}
        self._matrix = np.zeros((0, 256))
        self._ids = np.zeros(0, dtype=np.int64)
        self._index: SpatialIndex | None = None
        for r in records:
            self.insert(r)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(list(self._records))

    def __contains__(self, rid: int) -> bool:
        return rid in self._by_id

    @property
    def records(self) -> list[SubmapRecord]:
        return list(self._records)

    def get(self, rid: int) -> SubmapRecord:
        try:
            return self._by_id[rid]
        except KeyError:
            raise InvalidArgument(f"unknown submap id {rid}") from None

    def insert(self, rec: SubmapRecord) -> SubmapDatabase:
        with self._lock:
            if rec.id in self._by_id:
                raise ConflictError(f"submap id {rec.id} already present")
            self._records.append(rec)
            self._by_id[rec.id] = rec
            self._rebuild()
        return self

    def _rebuild(self) -> None:
        self._matrix = np.array([r.global_descriptor.vector for r in self._records], dtype=np.float64).reshape(-1, 256)
        self._ids = np.array([r.id for r in self._records], dtype=np.int64)
        self._index = SpatialIndex(self._matrix) if len(self._records) >= BRUTE_FORCE_LIMIT else None

    def retrieve_topk(self, query: GlobalDescriptor, k: int = 1) -> list[tuple[int, float]]:
        """Ranked (id, Euclidean distance) pairs; ties go to the lower id."""
        if k < 1:
            raise InvalidArgument(f"k must be >= 1, got {k}")
        with self._lock:
            if not self._records:
                raise EmptyDatabase("submap database is empty")
            q = np.asarray(query.vector, dtype=np.float64)
            if self._index is not None:
                hits = self._index.knn(q, len(self._records))
                # index rows are insertion order; re-sort so ties break by submap id
                rows = np.array([h[0] for h in hits])
                d = np.array([h[1] for h in hits])
            else:
                rows = np.arange(len(self._records))
                d = np.linalg.norm(self._matrix - q, axis=1)
            ids = self._ids[rows]
            order = np.lexsort((ids, d))[:k]
            return [(int(ids[i]), float(d[i])) for i in order]

    # -- persistence ------------------------------------------------------------
    def save(self, directory: str | Path) -> None:
        """Write ``index.jsonl`` plus per-record R3PC / R3FT blobs."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        lines = []
        for r in self._records:
            gpath = f"{r.id}.global.r3ft"
            kpath = f"{r.id}.keypoints.r3ft"
            io.write_features(root / gpath, r.global_descriptor.vector[None, :])
            io.write_features(root / kpath, r.keypoints.to_matrix().reshape(-1, 132))
            cloud = r.cloud_ref
            if cloud:
                src = Path(cloud)
                dst_name = f"{r.id}.r3pc"
                if src.resolve() != (root / dst_name).resolve():
                    shutil.copyfile(src, root / dst_name)
                cloud = dst_name
            lines.append(
                json.dumps(
                    {
                        "id": r.id,
                        "session": r.session,
                        "pose": [io.hexf(v) for v in r.root_pose.as_vector()],
                        "cloud": cloud,
                        "global": gpath,
                        "keypoints": kpath,
                    },
                    sort_keys=True,
                )
            )
        (root / INDEX_FILE).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def load(cls, directory: str | Path) -> SubmapDatabase:
        root = Path(directory)
        index_path = root / INDEX_FILE
        if not index_path.exists():
            raise FormatError("missing database index", str(index_path))
        db = cls()
        for lineno, line in enumerate(index_path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pose = RigidTransform.from_vector([io.parse_float(v) for v in obj["pose"]])
                g = io.load_features(root / obj["global"])
                kp = Keypoints.from_matrix(io.load_features(root / obj["keypoints"]))
                cloud = str(root / obj["cloud"]) if obj.get("cloud") else ""
                rec = SubmapRecord(int(obj["id"]), str(obj["session"]), pose, GlobalDescriptor(g.reshape(-1)), kp, cloud)
            except FormatError:
                raise
            except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
                raise FormatError(f"bad database record: {exc}", str(index_path), lineno) from exc
            db.insert(rec)
        return db


def insert(db: SubmapDatabase, rec: SubmapRecord) -> SubmapDatabase:
    return db.insert(rec)


def retrieve_topk(db: SubmapDatabase, query: GlobalDescriptor, k: int) -> list[tuple[int, float]]:
    return db.retrieve_topk(query, k)


def recall_at_k(
    predictions: Sequence[Sequence[int]],
    query_positions: ArrayLike,
    submap_positions: Mapping[int, ArrayLike],
    k_max: int,
    revisit_radius: float = 3.0,
) -> NDArray:
    """Recall@1..k_max.

    A query counts as recalled at k when any of its top-k ids lies within
    ``revisit_radius`` of the query's true position. Queries with no
    positive submap in the database still count in the denominator.
    """
    if k_max < 1:
        raise InvalidArgument("k_max must be >= 1")
    qpos = np.asarray(query_positions, dtype=np.float64).reshape(-1, 3)
    if len(predictions) != qpos.shape[0]:
        raise InvalidArgument("one ground-truth position per query is required")
    if qpos.shape[0] == 0:
        return np.zeros(k_max)
    first_hit = np.full(qpos.shape[0], np.inf)
    for qi, ranked in enumerate(predictions):
        for rank, sid in enumerate(ranked):
            if sid not in submap_positions:
                raise InvalidArgument(f"prediction references unknown submap id {sid}")
            d = np.linalg.norm(np.asarray(submap_positions[sid], dtype=np.float64) - qpos[qi])
            if d <= revisit_radius:
                first_hit[qi] = rank + 1
                break
    ks = np.arange(1, k_max + 1)
    return np.array([np.mean(first_hit <= k) for k in ks])
