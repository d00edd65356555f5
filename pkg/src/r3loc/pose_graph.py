"""Pose graphs of prior and revisit sessions and their rigid merge.

Graph file (one element per line, floats as hex literals)::

    session <tag>
    node <id> <root|child> <qw qx qy qz tx ty tz> <ref> [<session>]
    edge <from> <to> <qw qx qy qz tx ty tz>

``ref`` is the submap id for roots and the parent root id for children.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx

from . import io
from .errors import FormatError, StructuralError
from .geometry import RigidTransform

ROOT, CHILD = "root", "child"


@dataclass(frozen=True)
class GraphNode:
    id: int
    kind: str
    pose: RigidTransform
    ref: int  # submap id (root) or parent root id (child)
    session: str = ""

    def __post_init__(self) -> None:
        if self.kind not in (ROOT, CHILD):
            raise StructuralError(f"node kind must be root or child, got {self.kind!r}")


@dataclass(frozen=True)
class GraphEdge:
    source: int
    target: int
    relative: RigidTransform


class PoseGraph:
    """Immutable pose graph; mutators return new graphs."""

    def __init__(self, session: str = "", nodes: Iterable[GraphNode] = (), edges: Iterable[GraphEdge] = ()):
        self.session = session
        self._nodes: dict[int, GraphNode] = {}
        self._edges: dict[tuple[int, int], GraphEdge] = {}
        for n in nodes:
            self._put_node(n)
        for e in edges:
            self._put_edge(e)
        self._check_children()

    # -- construction helpers (used only while building) -------------------------
    def _put_node(self, n: GraphNode) -> None:
        if n.id in self._nodes:
            raise StructuralError(f"duplicate node id {n.id}")
        self._nodes[n.id] = n if n.session else replace(n, session=self.session)

    def _put_edge(self, e: GraphEdge) -> None:
        for end in (e.source, e.target):
            if end not in self._nodes:
                raise StructuralError(f"edge {e.source}->{e.target} references missing node {end}")
        key = (e.source, e.target)
        if key in self._edges:
            raise StructuralError(f"duplicate edge {e.source}->{e.target}")
        self._edges[key] = e

    def _check_children(self) -> None:
        for n in self._nodes.values():
            if n.kind == CHILD:
                parent = self._nodes.get(n.ref)
                if parent is None or parent.kind != ROOT:
                    raise StructuralError(f"child node {n.id} must attach to an existing root, got {n.ref}")

    # -- read access -----------------------------------------------------------------
    @property
    def nodes(self) -> Mapping[int, GraphNode]:
        return dict(self._nodes)

    @property
    def edges(self) -> list[GraphEdge]:
        return list(self._edges.values())

    def node(self, nid: int) -> GraphNode:
        try:
            return self._nodes[nid]
        except KeyError:
            raise StructuralError(f"unknown node {nid}") from None

    def __len__(self) -> int:
        return len(self._nodes)

    def root_for_submap(self, submap_id: int) -> GraphNode:
        for n in self._nodes.values():
            if n.kind == ROOT and n.ref == submap_id:
                return n
        raise StructuralError(f"no root node references submap {submap_id}")

    def is_connected(self) -> bool:
        if not self._nodes:
            return True
        g = nx.Graph()
        g.add_nodes_from(self._nodes)
        g.add_edges_from(self._edges)
        for n in self._nodes.values():
            if n.kind == CHILD:
                g.add_edge(n.id, n.ref)
        return nx.is_connected(g)

    # -- functional updates ---------------------------------------------------------
    def add_node(self, node: GraphNode) -> PoseGraph:
        return PoseGraph(self.session, [*self._nodes.values(), node], self._edges.values())

    def add_edge(self, edge: GraphEdge) -> PoseGraph:
        return PoseGraph(self.session, self._nodes.values(), [*self._edges.values(), edge])

    # -- persistence ------------------------------------------------------------------
    def save(self, path: str | Path) -> None:
        lines = [f"session {self.session or '-'}"]
        for n in sorted(self._nodes.values(), key=lambda n: n.id):
            lines.append(f"node {n.id} {n.kind} {io.format_transform(n.pose)} {n.ref} {n.session or '-'}")
        for e in self._edges.values():
            lines.append(f"edge {e.source} {e.target} {io.format_transform(e.relative)}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> PoseGraph:
        p = str(path)
        session = ""
        nodes: list[GraphNode] = []
        edges: list[tuple[int, GraphEdge]] = []
        for lineno, raw in enumerate(Path(p).read_text().splitlines(), start=1):
            toks = raw.split()
            if not toks or toks[0].startswith("#"):
                continue
            try:
                if toks[0] == "session" and len(toks) == 2:
                    session = "" if toks[1] == "-" else toks[1]
                elif toks[0] == "node" and len(toks) in (11, 12):
                    sess = toks[11] if len(toks) == 12 and toks[11] != "-" else ""
                    nodes.append(GraphNode(int(toks[1]), toks[2], io.parse_transform(toks[3:10]), int(toks[10]), sess))
                elif toks[0] == "edge" and len(toks) == 10:
                    edges.append((lineno, GraphEdge(int(toks[1]), int(toks[2]), io.parse_transform(toks[3:10]))))
                else:
                    raise FormatError(f"unrecognised line {raw.strip()!r}", p, lineno)
            except (ValueError, StructuralError) as exc:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(str(exc), p, lineno) from exc
        g = cls(session)
        try:
            for n in nodes:
                g._put_node(n)
            g._check_children()
        except StructuralError as exc:
            raise FormatError(str(exc), p) from exc
        for lineno, e in edges:
            try:
                g._put_edge(e)
            except StructuralError as exc:
                raise FormatError(str(exc), p, lineno) from exc
        return g


def add_node(graph: PoseGraph, node: GraphNode) -> PoseGraph:
    return graph.add_node(node)


def add_edge(graph: PoseGraph, edge: GraphEdge) -> PoseGraph:
    return graph.add_edge(edge)


def merge(prior: PoseGraph, revisit: PoseGraph, edge: GraphEdge) -> PoseGraph:
    """Re-anchor ``revisit`` into ``prior``'s world frame through ``edge``.

    ``edge`` runs from a prior root t1 to a revisit root q (revisit ids) and
    carries T_{t1,q}. Every revisit pose X becomes
    ``pose(t1) ∘ T ∘ pose(q)⁻¹ ∘ X``; revisit ids are offset by
    ``max(prior ids) + 1``. Prior poses are untouched and no optimisation
    is run.
    """
    if edge.source not in prior.nodes:
        raise StructuralError(f"edge source {edge.source} is not a prior node")
    if edge.target not in revisit.nodes:
        raise StructuralError(f"edge target {edge.target} is not a revisit node")
    anchor = prior.node(edge.source).pose.compose(edge.relative).compose(revisit.node(edge.target).pose.inverse())
    offset = (max(prior.nodes) + 1) if len(prior) else 0
    relabel = {nid: nid + offset for nid in revisit.nodes}

    nodes = list(prior.nodes.values())
    for n in revisit.nodes.values():
        ref = relabel[n.ref] if n.kind == CHILD else n.ref
        nodes.append(GraphNode(relabel[n.id], n.kind, anchor.compose(n.pose), ref, n.session or revisit.session))
    edges = list(prior.edges)
    edges += [GraphEdge(relabel[e.source], relabel[e.target], e.relative) for e in revisit.edges]
    edges.append(GraphEdge(edge.source, relabel[edge.target], edge.relative))
    return PoseGraph(prior.session, nodes, edges)
