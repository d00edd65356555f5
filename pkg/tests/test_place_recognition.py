import numpy as np
import pytest

from r3loc.descriptors import GlobalDescriptor, Keypoints
from r3loc.errors import ConflictError, EmptyDatabase, FormatError, InvalidArgument
from r3loc.geometry import PointCloud, RigidTransform
from r3loc import io
from r3loc.place_recognition import SubmapDatabase, SubmapRecord, insert, recall_at_k, retrieve_topk


def record(i, vec, rng, cloud_ref=""):
    kp = Keypoints(rng.normal(size=(4, 3)), rng.normal(size=(4, 128)))
    return SubmapRecord(i, "s", RigidTransform.from_yaw(i, (i, 0, 0)), GlobalDescriptor(vec), kp, cloud_ref)


def brute_force(db_vecs, ids, q, k):
    d = np.linalg.norm(db_vecs - q, axis=1)
    order = np.lexsort((ids, d))[:k]
    return [int(ids[i]) for i in order]


def test_retrieval_matches_brute_force(rng):
    db = SubmapDatabase()
    vecs = rng.normal(size=(40, 256))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    ids = rng.permutation(1000)[:40]
    for i, v in zip(ids, vecs):
        insert(db, record(int(i), v, rng))
    for _ in range(20):
        q = GlobalDescriptor(rng.normal(size=256))
        got = [i for i, _ in retrieve_topk(db, q, 5)]
        assert got == brute_force(vecs, ids, q.vector, 5)


def test_retrieval_exact_self_match_and_ties(rng):
    v = rng.normal(size=256)
    db = SubmapDatabase([record(7, v, rng), record(3, v, rng), record(5, -v, rng)])
    hits = db.retrieve_topk(GlobalDescriptor(v), 3)
    assert [h[0] for h in hits] == [3, 7, 5]
    assert hits[0][1] == 0.0


def test_large_database_uses_index_and_agrees(rng):
    vecs = rng.normal(size=(1100, 256)).astype(np.float32)
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    recs = [SubmapRecord(i, "", RigidTransform(), GlobalDescriptor(v), Keypoints(np.zeros((0, 3)), np.zeros((0, 128)))) for i, v in enumerate(vecs)]
    db = SubmapDatabase(recs)
    stored = np.array([r.global_descriptor.vector for r in recs], dtype=np.float64)
    for _ in range(5):
        q = GlobalDescriptor(rng.normal(size=256))
        assert [i for i, _ in db.retrieve_topk(q, 10)] == brute_force(stored, np.arange(1100), q.vector.astype(np.float64), 10)


def test_empty_database_and_duplicates(rng):
    with pytest.raises(EmptyDatabase):
        SubmapDatabase().retrieve_topk(GlobalDescriptor(np.ones(256)), 1)
    db = SubmapDatabase([record(1, np.ones(256), rng)])
    with pytest.raises(ConflictError):
        db.insert(record(1, np.ones(256), rng))
    with pytest.raises(InvalidArgument):
        db.retrieve_topk(GlobalDescriptor(np.ones(256)), 0)


def test_save_load_round_trip(tmp_path, rng):
    io.write_cloud(tmp_path / "c.r3pc", PointCloud(rng.normal(size=(10, 3))))
    db = SubmapDatabase([record(i, rng.normal(size=256), rng, str(tmp_path / "c.r3pc")) for i in range(3)])
    db.save(tmp_path / "db")
    back = SubmapDatabase.load(tmp_path / "db")
    assert [r.id for r in back] == [0, 1, 2]
    for a, b in zip(db, back):
        assert np.array_equal(a.global_descriptor.vector, b.global_descriptor.vector)
        assert np.array_equal(a.keypoints.to_matrix(), b.keypoints.to_matrix())
        assert np.array_equal(a.root_pose.as_vector(), b.root_pose.as_vector())
        assert len(io.read_cloud(b.cloud_ref)) == 10


def test_load_reports_bad_line(tmp_path, rng):
    SubmapDatabase([record(0, rng.normal(size=256), rng)]).save(tmp_path)
    with open(tmp_path / "index.jsonl", "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(FormatError) as ei:
        SubmapDatabase.load(tmp_path)
    assert ei.value.offset == 2


def test_recall_at_k_examples():
    subs = {0: [0, 0, 0], 1: [10, 0, 0], 2: [20, 0, 0]}
    preds = [[0, 1, 2], [0, 1, 2], [2, 0, 1], [1, 2, 0]]
    qpos = [[1, 0, 0], [10.5, 0, 0], [50, 0, 0], [0, 2, 0]]
    r = recall_at_k(preds, qpos, subs, 3, 3.0)
    # q0 hit at 1, q1 at 2, q2 never (no positive), q3 at 3
    assert np.allclose(r, [0.25, 0.5, 0.75])
    assert np.all(np.diff(r) >= 0)
    with pytest.raises(InvalidArgument):
        recall_at_k([[9]], [[0, 0, 0]], subs, 1)
