"""End-to-end orchestration behind the command-line tool."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .config import PipelineConfig
from .descriptors import DescriptorSettings, GlobalDescriptor, Keypoints, describe_submap
from .errors import FormatError, InsufficientData, InvalidArgument, NoConsensus, NoOverlap, R3LocError
from .geometry import PointCloud, RigidTransform
from .place_recognition import SubmapDatabase, SubmapRecord, recall_at_k
from .pose_graph import ROOT, GraphEdge, GraphNode, PoseGraph
from .registration import (
    RegistrationResult,
    icp_refine,
    match_keypoints,
    pose_error,
    ransac_register,
    registration_success,
)
from .verification import EMPTY, BaselineProvider, CameraModel, FileProvider, SvcModel, VerificationFeatures, verify

log = logging.getLogger(__name__)

POSES_FILE = "poses.txt"
GRAPH_FILE = "graph.txt"
# columns of the runtime table, in print order
TABLE_STAGES = ("description", "localisation", "superpixel", "features", "mcs", "verification")
LOCALISATION_PARTS = ("retrieval", "matching", "ransac", "icp")


class BuildError(R3LocError):
    """One or more input files could not be ingested."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


# -- descriptors -----------------------------------------------------------------------

def sidecars(cloud_path: str | Path) -> tuple[Path, Path]:
    p = Path(cloud_path)
    return p.with_suffix(".global.r3ft"), p.with_suffix(".keypoints.r3ft")


def describe(cloud: PointCloud, cloud_path: str | Path | None, config: PipelineConfig) -> tuple[GlobalDescriptor, Keypoints]:
    f = config.features
    if f.provider == "baseline":
        return describe_submap(cloud, DescriptorSettings(f.keypoint_budget, f.local_radius, f.gem_p))
    if cloud_path is None:
        raise InvalidArgument("file feature provider needs the cloud's path to find its descriptor files")
    gpath, kpath = sidecars(cloud_path)
    g = io.load_features(gpath)
    if g.shape[0] != 1:
        raise FormatError(f"expected one global descriptor row, got {g.shape[0]}", str(gpath))
    kp = Keypoints.from_matrix(io.load_features(kpath))
    if len(kp) > f.keypoint_budget:
        kp = Keypoints(kp.positions[: f.keypoint_budget], kp.descriptors[: f.keypoint_budget], kp.saliency[: f.keypoint_budget])
    return GlobalDescriptor(g.reshape(-1)), kp


def feature_provider(config: PipelineConfig, image_path: str | Path | None = None):
    v = config.verification
    if v.provider == "baseline":
        return BaselineProvider(v.feature_dim, v.colour_sigma)
    return FileProvider(Path(image_path).with_suffix(".features.r3ft") if image_path else None)


# -- build-db --------------------------------------------------------------------------

def read_pose_list(path: Path) -> tuple[str, list[tuple[int, str, RigidTransform]]]:
    session = ""
    entries = []
    seen: set[int] = set()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if toks[0] == "session" and len(toks) == 2:
            session = toks[1]
            continue
        if len(toks) != 9:
            raise FormatError("expected '<id> <cloud file> <qw qx qy qz tx ty tz>'", str(path), lineno)
        try:
            sid = int(toks[0])
            pose = io.parse_transform(toks[2:9])
        except (ValueError, R3LocError) as exc:
            raise FormatError(f"bad pose entry: {exc}", str(path), lineno) from exc
        if sid in seen:
            raise FormatError(f"duplicate submap id {sid}", str(path), lineno)
        seen.add(sid)
        entries.append((sid, toks[1], pose))
    return session, entries


def build_database(input_dir: str | Path, db_dir: str | Path, config: PipelineConfig) -> tuple[SubmapDatabase, list[str]]:
    """Describe every submap listed in ``poses.txt`` and write the database.

    Returns the database and a list of warnings. Raises :class:`BuildError`
    listing every unreadable file. Output is a pure function of the inputs.
    """
    src = Path(input_dir)
    if not src.is_dir():
        raise BuildError([f"{src}: not a directory"])
    warnings: list[str] = []
    pose_file = src / POSES_FILE
    if not pose_file.exists():
        clouds = sorted(src.glob("*.r3pc"))
        if clouds:
            raise BuildError([f"{pose_file}: missing, but {len(clouds)} cloud file(s) present"])
        warnings.append(f"{src}: no {POSES_FILE} and no clouds; writing an empty database")
        session, entries = "", []
    else:
        session, entries = read_pose_list(pose_file)
        if not entries:
            warnings.append(f"{pose_file}: no submaps listed; writing an empty database")

    records, problems = [], []
    for sid, name, pose in entries:
        cpath = src / name
        try:
            cloud = io.read_cloud(cpath)
            if len(cloud) == 0:
                raise FormatError("cloud has no points", str(cpath))
            g, kp = describe(cloud, cpath, config)
            records.append(SubmapRecord(sid, session, pose, g, kp, str(cpath)))
        except FileNotFoundError as exc:
            problems.append(f"{exc.filename}: file not found")
        except (R3LocError, OSError) as exc:
            problems.append(f"{cpath}: {exc}")
    if problems:
        raise BuildError(problems)

    out = Path(db_dir)
    if out.exists():
        for stale in [*out.glob("*.r3ft"), *out.glob("*.r3pc"), out / "index.jsonl", out / GRAPH_FILE]:
            if stale.is_file():
                stale.unlink()
    out.mkdir(parents=True, exist_ok=True)
    db = SubmapDatabase(sorted(records, key=lambda r: r.id))
    db.save(out)
    prior_graph(db, session).save(out / GRAPH_FILE)
    return db, warnings


def prior_graph(db: SubmapDatabase, session: str = "") -> PoseGraph:
    """Root node per submap, chained by their relative poses."""
    recs = sorted(db.records, key=lambda r: r.id)
    nodes = [GraphNode(r.id, ROOT, r.root_pose, r.id, session) for r in recs]
    edges = [
        GraphEdge(a.id, b.id, a.root_pose.inverse().compose(b.root_pose)) for a, b in zip(recs, recs[1:])
    ]
    return PoseGraph(session, nodes, edges)


# -- relocalise ------------------------------------------------------------------------

@dataclass
class RelocalisationReport:
    query_id: str
    candidates: list[tuple[int, float]]
    ransac: RegistrationResult | None = None
    icp: RegistrationResult | None = None
    features: VerificationFeatures = EMPTY
    verdict: str = "unmatched"
    edge: GraphEdge | None = None
    failure: str = ""
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.verdict == "matched"

    @property
    def transform(self) -> RigidTransform | None:
        if self.icp is not None:
            return self.icp.transform
        return self.ransac.transform if self.ransac is not None else None

    def table_row(self) -> dict[str, float]:
        t = self.timings
        row = {s: t.get(s, 0.0) for s in TABLE_STAGES if s != "localisation"}
        row["localisation"] = sum(t.get(s, 0.0) for s in LOCALISATION_PARTS)
        row["io"] = t.get("io", 0.0)
        row["total"] = t.get("total", 0.0)
        return row

    def to_dict(self) -> dict:
        T = self.transform
        d: dict = {
            "query": self.query_id,
            "top_candidate": self.candidates[0][0] if self.candidates else None,
            "candidates": [{"id": i, "distance": dist} for i, dist in self.candidates],
            "ransac_inliers": self.ransac.inlier_count if self.ransac else 0,
            "ransac_rms": self.ransac.inlier_rms if self.ransac else None,
            "ransac_iterations": self.ransac.ransac_iterations if self.ransac else 0,
            "icp_iterations": self.icp.icp_iterations if self.icp else 0,
            "icp_converged": bool(self.icp.converged) if self.icp else False,
            "icp_rms": self.icp.inlier_rms if self.icp else None,
            "transform": [float(v) for v in T.as_vector()] if T is not None else None,
            "mcs": self.features.mcs,
            "nu": self.features.alignment_ratio,
            "pair_count": self.features.pair_count,
            "mismatch_count": self.features.mismatch_count,
            "failure": self.failure or None,
            "verdict": self.verdict,
            "accepted": self.accepted,
        }
        row = self.table_row()
        for s in (*TABLE_STAGES, "io", "total"):
            d[f"time_{s}"] = row[s]
        if self.edge is not None:
            e = self.edge
            d["edge"] = f"{e.source} {e.target} {io.format_transform(e.relative)}"
        return d

    def lines(self) -> list[str]:
        out = []
        for k, v in self.to_dict().items():
            if k == "candidates":
                v = " ".join(f"{c['id']}:{c['distance']!r}" for c in v)
            elif k == "transform" and v is not None:
                v = " ".join(repr(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif v is None:
                v = "-"
            out.append(f"{k}: {v}")
        return out


def relocalise(
    db: SubmapDatabase,
    cloud: PointCloud,
    image: np.ndarray,
    camera: CameraModel,
    model: SvcModel,
    config: PipelineConfig,
    *,
    cloud_path: str | Path | None = None,
    image_path: str | Path | None = None,
    seed: int = 42,
    query_id: str = "query",
    query_node: int = 0,
    timings: dict[str, float] | None = None,
) -> RelocalisationReport:
    """Retrieve the top candidate, register against it, verify, decide.

    Raises EmptyDatabase when there is nothing to retrieve from.
    """
    t = {} if timings is None else timings
    tick = time.perf_counter()

    def lap(stage: str) -> None:
        nonlocal tick
        now = time.perf_counter()
        t[stage] = t.get(stage, 0.0) + now - tick
        tick = now

    g, kp = describe(cloud, cloud_path, config)
    lap("description")
    ranked = db.retrieve_topk(g, max(1, config.retrieval.k))
    lap("retrieval")
    report = RelocalisationReport(query_id, ranked, timings=t)
    rec = db.get(ranked[0][0])
    r = config.registration
    corr = match_keypoints(kp, rec.keypoints, r.lowe_ratio)
    lap("matching")
    try:
        report.ransac = ransac_register(
            corr, kp.positions, rec.keypoints.positions, r.inlier_threshold, r.max_iters, seed, r.confidence
        )
        lap("ransac")
        cand_cloud = io.read_cloud(rec.cloud_ref)
        lap("io")
        report.icp = icp_refine(
            cloud, cand_cloud, report.ransac.transform, r.icp_resolution, r.icp_max_corr_dist, r.icp_max_iters, r.icp_tolerance
        )
        lap("icp")
    except (InsufficientData, NoConsensus, NoOverlap) as exc:
        # no usable geometric hypothesis: nothing can be verified
        lap("ransac" if report.ransac is None else "icp")
        report.failure = f"{type(exc).__name__}: {exc}"
        report.verdict = "unmatched"
        return report

    v = config.verification
    T = report.icp.transform  # query frame -> candidate frame
    vt: dict[str, float] = {}
    report.verdict, report.features = verify(
        image,
        cand_cloud,
        T.inverse(),  # projection needs candidate -> query lidar
        camera,
        feature_provider(config, image_path),
        model,
        target_count=v.superpixels,
        compactness=v.compactness,
        iterations=v.slic_iterations,
        top_k=v.top_k,
        min_depth=v.min_depth,
        timings=vt,
    )
    for k, dt in vt.items():
        t[k] = t.get(k, 0.0) + dt
    if report.accepted:
        report.edge = GraphEdge(rec.id, query_node, T)
    return report


def load_and_relocalise(
    db_dir: str | Path,
    cloud_path: str | Path,
    image_path: str | Path,
    calib_path: str | Path,
    svc_path: str | Path,
    config: PipelineConfig,
    seed: int = 42,
    query_id: str | None = None,
    query_node: int = 0,
    db: SubmapDatabase | None = None,
    model: SvcModel | None = None,
    camera: CameraModel | None = None,
) -> RelocalisationReport:
    """File-level wrapper; every stage including I/O is timed."""
    t: dict[str, float] = {}
    start = time.perf_counter()
    db = db if db is not None else SubmapDatabase.load(db_dir)
    model = model if model is not None else SvcModel.load(svc_path)
    camera = camera if camera is not None else CameraModel.load(calib_path)
    cloud = io.read_cloud(cloud_path)
    image = io.read_image(image_path)
    t["io"] = time.perf_counter() - start
    report = relocalise(
        db, cloud, image, camera, model, config,
        cloud_path=cloud_path, image_path=image_path, seed=seed,
        query_id=query_id if query_id is not None else Path(cloud_path).stem,
        query_node=query_node, timings=t,
    )
    t["total"] = time.perf_counter() - start
    return report


# -- train-svc -------------------------------------------------------------------------

def read_training_table(path: str | Path) -> list[tuple[float, float, str]]:
    p = str(path)
    samples = []
    with open(p, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"mcs", "nu", "label"} <= set(reader.fieldnames):
            raise FormatError("training table needs columns mcs,nu,label", p, 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                m, n = float(row["mcs"]), float(row["nu"])
            except (TypeError, ValueError):
                raise FormatError("non-numeric mcs/nu", p, lineno) from None
            if not (math.isfinite(m) and math.isfinite(n)):
                raise FormatError("non-finite mcs/nu", p, lineno)
            samples.append((m, n, row["label"].strip()))
    return samples


# -- evaluate --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuerySpec:
    id: str
    cloud: Path
    image: Path
    truth: RigidTransform  # query pose in the prior-map frame
    label: str | None = None


def read_queries(path: str | Path) -> list[QuerySpec]:
    p = Path(path)
    out = []
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        if len(toks) < 10:
            raise FormatError("query needs '<id> <cloud> <image> <7 pose values> [label]' (ground truth missing?)", str(p), lineno)
        if len(toks) > 11:
            raise FormatError("too many fields", str(p), lineno)
        try:
            truth = io.parse_transform(toks[3:10])
        except (ValueError, R3LocError) as exc:
            raise FormatError(f"bad ground-truth pose: {exc}", str(p), lineno) from exc
        label = toks[10] if len(toks) == 11 else None
        out.append(QuerySpec(toks[0], p.parent / toks[1], p.parent / toks[2], truth, label))
    return out


@dataclass
class QueryOutcome:
    spec: QuerySpec
    report: RelocalisationReport
    ranked: list[int]
    expected: str
    revisit: bool
    success: bool
    rot_err: float
    trans_err: float


@dataclass
class EvaluationReport:
    outcomes: list[QueryOutcome]
    recall: np.ndarray
    classes: tuple[str, ...] = ("matched", "mismatched", "unmatched")

    @property
    def success_rate(self) -> float:
        rev = [o for o in self.outcomes if o.revisit]
        return float(np.mean([o.success for o in rev])) if rev else float("nan")

    def confusion(self) -> dict[tuple[str, str], int]:
        c = {(a, b): 0 for a in self.classes for b in self.classes}
        for o in self.outcomes:
            c[(o.expected, o.report.verdict)] += 1
        return c

    def precision_recall(self) -> dict[str, tuple[float, float]]:
        c = self.confusion()
        out = {}
        for k in self.classes:
            tp = c[(k, k)]
            pred = sum(c[(a, k)] for a in self.classes)
            true = sum(c[(k, b)] for b in self.classes)
            out[k] = (tp / pred if pred else float("nan"), tp / true if true else float("nan"))
        return out

    def runtime_table(self) -> dict[str, tuple[float, float]]:
        rows = [o.report.table_row() for o in self.outcomes]
        return {s: (float(np.mean([r[s] for r in rows])), float(np.std([r[s] for r in rows])))
                for s in (*TABLE_STAGES, "io", "total")} if rows else {}

    def to_dict(self) -> dict:
        d: dict = {"queries": len(self.outcomes)}
        for k, r in enumerate(self.recall, start=1):
            d[f"recall@{k}"] = float(r)
        d["success_rate"] = self.success_rate
        d["revisit_queries"] = sum(o.revisit for o in self.outcomes)
        for k, (p, r) in self.precision_recall().items():
            d[f"precision_{k}"] = p
            d[f"recall_{k}"] = r
        for (a, b), n in self.confusion().items():
            d[f"confusion_{a}_as_{b}"] = n
        for s, (m, sd) in self.runtime_table().items():
            d[f"runtime_{s}"] = f"{m:.3f}±{sd:.3f}"
        return d

    def table_text(self) -> str:
        """Per-stage runtime as a mean row and a std row."""
        tab = self.runtime_table()
        cols = [*TABLE_STAGES, "total"]
        head = "        " + " ".join(f"{c:>12}" for c in cols)
        mean = "mean(s) " + " ".join(f"{tab[c][0]:>12.3f}" for c in cols)
        std = "std(s)  " + " ".join(f"{'±' + format(tab[c][1], '.3f'):>12}" for c in cols)
        return "\n".join([head, mean, std])

    def write_csv(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with open(d / "recall.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "recall"])
            for k, r in enumerate(self.recall, start=1):
                w.writerow([k, repr(float(r))])
        with open(d / "verification.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["query", "mcs", "nu", "expected", "verdict", "rot_err_deg", "trans_err_m"])
            for o in self.outcomes:
                f = o.report.features
                w.writerow([o.spec.id, repr(f.mcs), repr(f.nu), o.expected, o.report.verdict, repr(o.rot_err), repr(o.trans_err)])
        with open(d / "runtime.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            cols = [*TABLE_STAGES, "io", "total"]
            w.writerow(["query", *cols])
            for o in self.outcomes:
                row = o.report.table_row()
                w.writerow([o.spec.id, *(repr(row[c]) for c in cols)])


def evaluate(
    db_dir: str | Path,
    queries: Sequence[QuerySpec],
    calib_path: str | Path,
    svc_path: str | Path,
    config: PipelineConfig,
    seed: int = 42,
) -> EvaluationReport:
    db = SubmapDatabase.load(db_dir)
    model = SvcModel.load(svc_path)
    camera = CameraModel.load(calib_path)
    positions = {r.id: r.root_pose.translation for r in db.records}
    ids = np.array(sorted(positions))
    pos = np.array([positions[i] for i in ids]).reshape(-1, 3)
    k_max = min(config.retrieval.recall_k, len(db)) if len(db) else 1
    rr = config.retrieval.revisit_radius
    # the report's candidate list doubles as the Recall@K ranking
    cfg = replace(config, retrieval=replace(config.retrieval, k=max(k_max, config.retrieval.k)))
    outcomes, rankings = [], []
    for q in queries:
        rep = load_and_relocalise(db_dir, q.cloud, q.image, calib_path, svc_path, cfg, seed, q.id,
                                  db=db, model=model, camera=camera)
        ranked = [i for i, _ in rep.candidates[:k_max]]
        rankings.append(ranked)
        revisit = bool(len(pos) and np.min(np.linalg.norm(pos - q.truth.translation, axis=1)) <= rr)
        top = db.get(rep.candidates[0][0])
        near = float(np.linalg.norm(top.root_pose.translation - q.truth.translation)) <= rr
        T = rep.transform
        rot = trans = float("inf")
        success = False
        if T is not None and near:
            truth_rel = top.root_pose.inverse().compose(q.truth)
            rot, trans = pose_error(T, truth_rel)
            success = registration_success(T, truth_rel, config.registration.rot_tol, config.registration.trans_tol)
        expected = q.label or ("matched" if success else "mismatched" if near else "unmatched")
        outcomes.append(QueryOutcome(q, rep, ranked, expected, revisit, success, rot, trans))
    recall = recall_at_k(rankings, [q.truth.translation for q in queries], positions, k_max, rr)
    return EvaluationReport(outcomes, recall)

