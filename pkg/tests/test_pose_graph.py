import numpy as np
import pytest

from r3loc.errors import FormatError, StructuralError
from r3loc.geometry import RigidTransform
from r3loc.pose_graph import CHILD, ROOT, GraphEdge, GraphNode, PoseGraph, add_edge, add_node, merge


def chain(rng, n, session, start=0):
    poses = [RigidTransform.random(rng, 30.0)]
    for _ in range(n - 1):
        poses.append(poses[-1].compose(RigidTransform.random(rng, 5.0)))
    nodes = [GraphNode(start + i, ROOT, p, i, session) for i, p in enumerate(poses)]
    edges = [GraphEdge(start + i, start + i + 1, poses[i].inverse().compose(poses[i + 1])) for i in range(n - 1)]
    return PoseGraph(session, nodes, edges)


def test_add_node_and_edge(rng):
    g = PoseGraph("a", [GraphNode(0, ROOT, RigidTransform.identity(), 0)])
    g2 = add_node(g, GraphNode(1, ROOT, RigidTransform.identity(), 1))
    assert len(g) == 1 and len(g2) == 2
    g3 = add_edge(g2, GraphEdge(0, 1, RigidTransform.identity()))
    assert len(g3.edges) == 1 and len(g2.edges) == 0
    with pytest.raises(StructuralError):
        add_edge(g2, GraphEdge(0, 7, RigidTransform.identity()))
    with pytest.raises(StructuralError):
        add_edge(g3, GraphEdge(0, 1, RigidTransform.identity()))
    with pytest.raises(StructuralError):
        add_node(g2, GraphNode(1, ROOT, RigidTransform.identity(), 5))


def test_child_must_attach_to_root():
    r = GraphNode(0, ROOT, RigidTransform.identity(), 0)
    PoseGraph("", [r, GraphNode(1, CHILD, RigidTransform.identity(), 0)])
    with pytest.raises(StructuralError):
        PoseGraph("", [r, GraphNode(1, CHILD, RigidTransform.identity(), 9)])
    with pytest.raises(StructuralError):
        GraphNode(2, "leaf", RigidTransform.identity(), 0)


def test_merge_single_identity_node(rng):
    prior = chain(rng, 3, "prior")
    rev = PoseGraph("rev", [GraphNode(0, ROOT, RigidTransform.identity(), 0)])
    m = merge(prior, rev, GraphEdge(1, 0, RigidTransform.identity()))
    new = m.node(3)
    assert np.allclose(new.pose.as_matrix4(), prior.node(1).pose.as_matrix4(), atol=1e-12)
    assert new.session == "rev"


def test_merge_chain_matches_manual_composition(rng):
    prior = chain(rng, 4, "prior")
    rev = chain(rng, 3, "rev")
    T = RigidTransform.random(rng, 3.0)
    m = merge(prior, rev, GraphEdge(2, 0, T))
    anchor = prior.node(2).pose.as_matrix4() @ T.as_matrix4() @ np.linalg.inv(rev.node(0).pose.as_matrix4())
    for i in range(3):
        want = anchor @ rev.node(i).pose.as_matrix4()
        assert np.allclose(m.node(4 + i).pose.as_matrix4(), want, atol=1e-9)
    # the anchored revisit root sits exactly at pose(t1) * T
    assert np.allclose(m.node(4).pose.as_matrix4(), prior.node(2).pose.as_matrix4() @ T.as_matrix4(), atol=1e-9)


def test_merge_properties(rng):
    prior = chain(rng, 5, "prior")
    rev = chain(rng, 6, "rev")
    rev = rev.add_node(GraphNode(6, CHILD, RigidTransform.random(rng), 2))
    m = merge(prior, rev, GraphEdge(4, 1, RigidTransform.random(rng)))
    assert len(m) == len(prior) + len(rev)
    assert m.is_connected()
    for nid, n in prior.nodes.items():
        assert np.array_equal(m.node(nid).pose.as_vector(), n.pose.as_vector())
    for e in rev.edges:
        before = rev.node(e.source).pose.inverse().compose(rev.node(e.target).pose)
        after = m.node(e.source + 5).pose.inverse().compose(m.node(e.target + 5).pose)
        assert np.abs(before.as_matrix4() - after.as_matrix4()).max() <= 1e-9
    assert m.node(11).kind == CHILD and m.node(11).ref == 7
    with pytest.raises(StructuralError):
        merge(prior, rev, GraphEdge(99, 0, RigidTransform.identity()))
    with pytest.raises(StructuralError):
        merge(prior, rev, GraphEdge(0, 99, RigidTransform.identity()))


def test_round_trip_bit_identical(tmp_path, rng):
    g = chain(rng, 20, "prior")
    g.save(tmp_path / "g.txt")
    back = PoseGraph.load(tmp_path / "g.txt")
    assert back.session == "prior" and len(back) == 20 and len(back.edges) == 19
    for nid, n in g.nodes.items():
        assert np.array_equal(back.node(nid).pose.as_vector(), n.pose.as_vector())
        assert back.node(nid).ref == n.ref


def test_empty_round_trip(tmp_path):
    PoseGraph().save(tmp_path / "g.txt")
    back = PoseGraph.load(tmp_path / "g.txt")
    assert len(back) == 0 and back.edges == [] and back.is_connected()


def test_dangling_edge_reports_line(tmp_path, rng):
    g = chain(rng, 2, "s")
    g.save(tmp_path / "g.txt")
    lines = (tmp_path / "g.txt").read_text().splitlines()
    lines.append(lines[-1].replace("edge 0 1", "edge 0 5"))
    (tmp_path / "g.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError) as e:
        PoseGraph.load(tmp_path / "g.txt")
    assert e.value.offset == len(lines)


def test_malformed_line(tmp_path):
    (tmp_path / "g.txt").write_text("session s\nnode 0 root 1 2\n")
    with pytest.raises(FormatError) as e:
        PoseGraph.load(tmp_path / "g.txt")
    assert e.value.offset == 2
