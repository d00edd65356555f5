"""Synthetic forest places for tests, the acceptance suite and the demo CLI.

A :class:`World` holds well-separated *places*. Each place is a flat ground
patch with trees (vertical trunk cylinders under spherical crowns) and
half-buried rocks. Every place has its own colour style; surfaces add a
smooth spatial texture on top. Submaps are area-uniform surface samples
(an accumulated map rather than a single scan) carrying RGB per point, and
camera images are ray-cast from the same surfaces, so a colour-based
feature provider sees planted 2D/3D correspondences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import PointCloud, RigidTransform
from .verification.camera import LIDAR_TO_OPTICAL, CameraModel

SENSOR_HEIGHT = 1.5
SKY = np.array([0.72, 0.82, 0.95])
GROUND, TRUNK, CROWN, ROCK = 0, 1, 2, 3


def default_camera(width: int = 160, height: int = 120) -> CameraModel:
    """Forward-looking pinhole camera rigidly mounted next to the lidar."""
    offset = RigidTransform(translation=(0.0, 0.05, -0.1))  # camera-frame lever arm, meters
    return CameraModel(
        fx=0.625 * width,
        fy=0.625 * width,
        cx=width / 2,
        cy=height / 2,
        width=width,
        height=height,
        lidar_to_camera=offset.compose(LIDAR_TO_OPTICAL),
    )


@dataclass
class Place:
    origin: NDArray  # world xy
    style: NDArray  # 4 x 3 base colours (ground, trunk, crown, rock)
    trees: NDArray  # rows: x, y, trunk_r, trunk_h, crown_r, jitter_r, jitter_g, jitter_b
    rocks: NDArray  # rows: x, y, r, jitter_r, jitter_g, jitter_b
    waves: NDArray  # 3 channels x 2 waves x (kx, ky, phase)


def _style(rng: np.random.Generator, existing: list[NDArray], min_dist: float) -> NDArray:
    for _ in range(10_000):
        s = rng.uniform(0.12, 0.88, size=(4, 3))
        if all(np.linalg.norm(s - e) >= min_dist for e in existing):
            return s
    return s


def make_place(rng: np.random.Generator, origin, existing_styles: list[NDArray], radius: float = 30.0,
               min_style_dist: float = 0.6) -> Place:
    # place-level structure so that different places differ in more than colour
    n_trees = int(rng.integers(50, 90))
    h_lo = rng.uniform(2.0, 5.0)
    c_lo = rng.uniform(0.8, 1.6)
    txy = rng.uniform(-radius, radius, size=(n_trees, 2)) + origin
    # keep the immediate sensor neighbourhood clear
    txy = txy[np.linalg.norm(txy - origin, axis=1) > 2.5]
    n = txy.shape[0]
    trees = np.column_stack(
        [
            txy,
            rng.uniform(0.15, 0.45, n),
            rng.uniform(h_lo, h_lo + 4.0, n),
            rng.uniform(c_lo, c_lo + 1.2, n),
            rng.uniform(-0.08, 0.08, (n, 3)),
        ]
    )
    n_rocks = int(rng.integers(8, 25))
    rxy = rng.uniform(-radius, radius, size=(n_rocks, 2)) + origin
    rxy = rxy[np.linalg.norm(rxy - origin, axis=1) > 2.5]
    m = rxy.shape[0]
    rocks = np.column_stack([rxy, rng.uniform(0.4, 1.4, m), rng.uniform(-0.06, 0.06, (m, 3))])
    wavelengths = rng.uniform(3.0, 8.0, size=(3, 2))
    angles = rng.uniform(0, 2 * math.pi, size=(3, 2))
    waves = np.stack(
        [2 * math.pi / wavelengths * np.cos(angles), 2 * math.pi / wavelengths * np.sin(angles), rng.uniform(0, 2 * math.pi, (3, 2))],
        axis=-1,
    )
    return Place(np.asarray(origin, float), _style(rng, existing_styles, min_style_dist), trees, rocks, waves)


class World:
    """Union of places; surface queries dispatch to the nearest place."""

    def __init__(self, places: list[Place], seed: int = 0):
        self.places = places
        self.seed = seed
        self.origins = np.array([p.origin for p in places]).reshape(-1, 2)

    @classmethod
    def generate(cls, n_places: int, seed: int = 0, spacing: float = 200.0) -> World:
        rng = np.random.default_rng(seed)
        places: list[Place] = []
        for i in range(n_places):
            origin = np.array([spacing * i, 0.0])
            places.append(make_place(rng, origin, [p.style for p in places]))
        return cls(places, seed)

    def place_of(self, xy: NDArray) -> NDArray:
        d = np.linalg.norm(np.asarray(xy)[:, None, :2] - self.origins[None], axis=2)
        return np.argmin(d, axis=1)

    # -- colours ---------------------------------------------------------------------
    def _texture(self, place: Place, pts: NDArray, amplitude: float) -> NDArray:
        w = place.waves
        phase = pts[:, None, None, 0] * w[None, :, :, 0] + pts[:, None, None, 1] * w[None, :, :, 1] + w[None, :, :, 2]
        return amplitude * np.sin(phase).mean(axis=2)

    def colour(self, pts: NDArray, kind: NDArray, obj: NDArray) -> NDArray:
        """RGB in [0, 1] for surface points of the given kind / object index."""
        out = np.zeros((pts.shape[0], 3))
        pidx = self.place_of(pts[:, :2])
        for pi in np.unique(pidx):
            place = self.places[pi]
            sel = pidx == pi
            k, o, p = kind[sel], obj[sel], pts[sel]
            c = place.style[k].copy()
            g = k == GROUND
            c[g] += self._texture(place, p[g], 0.14)
            t = k == TRUNK
            c[t] += place.trees[o[t], 5:8] + 0.04 * np.tanh(p[t, 2:3] - 2.0)
            cr = k == CROWN
            c[cr] += place.trees[o[cr], 5:8] + self._texture(place, p[cr] + p[cr, 2:3], 0.06)
            r = k == ROCK
            c[r] += place.rocks[o[r], 3:6] + 0.03 * np.tanh(p[r, 2:3])
            out[sel] = c
        return np.clip(out, 0.0, 1.0)

    # -- lidar -------------------------------------------------------------------------
    def sample_submap(self, pose: RigidTransform, rng: np.random.Generator, radius: float = 20.0,
                      density: float = 8.0, noise: float = 0.01) -> PointCloud:
        """Colourised surface samples within ``radius`` (xy) of ``pose``, in the pose's frame."""
        c = pose.translation[:2]
        pts, kinds, objs = [], [], []

        n = rng.poisson(density * math.pi * radius ** 2)
        rr = radius * np.sqrt(rng.uniform(size=n))
        th = rng.uniform(0, 2 * math.pi, n)
        g = np.column_stack([c[0] + rr * np.cos(th), c[1] + rr * np.sin(th), np.zeros(n)])
        pts.append(g)
        kinds.append(np.full(n, GROUND))
        objs.append(np.zeros(n, np.int64))

        for pi in np.flatnonzero(np.linalg.norm(self.origins - c, axis=1) < radius + 60.0):
            place = self.places[pi]
            for ti, (x, y, tr, th_, cr, *_rest) in enumerate(place.trees):
                if math.hypot(x - c[0], y - c[1]) > radius:
                    continue
                m = rng.poisson(density * 2 * math.pi * tr * th_)
                a = rng.uniform(0, 2 * math.pi, m)
                pts.append(np.column_stack([x + tr * np.cos(a), y + tr * np.sin(a), rng.uniform(0, th_, m)]))
                kinds.append(np.full(m, TRUNK))
                objs.append(np.full(m, ti))
                m = rng.poisson(density * 4 * math.pi * cr * cr)
                v = rng.normal(size=(m, 3))
                v /= np.linalg.norm(v, axis=1, keepdims=True)
                pts.append(np.array([x, y, th_ + 0.7 * cr]) + cr * v)
                kinds.append(np.full(m, CROWN))
                objs.append(np.full(m, ti))
            for ri, (x, y, r, *_rest) in enumerate(place.rocks):
                if math.hypot(x - c[0], y - c[1]) > radius:
                    continue
                m = rng.poisson(density * 4 * math.pi * r * r)
                v = rng.normal(size=(m, 3))
                v /= np.linalg.norm(v, axis=1, keepdims=True)
                s = np.array([x, y, -0.3 * r]) + r * v
                s = s[s[:, 2] > 0]
                pts.append(s)
                kinds.append(np.full(s.shape[0], ROCK))
                objs.append(np.full(s.shape[0], ri))

        P = np.concatenate(pts)
        K = np.concatenate(kinds)
        O = np.concatenate(objs)
        rgb = self.colour(P, K, O)
        P = P + rng.normal(scale=noise, size=P.shape)
        return PointCloud(pose.inverse().apply(P), rgb)

    # -- camera --------------------------------------------------------------------------
    def render(self, camera: CameraModel, lidar_pose: RigidTransform, rng: np.random.Generator | None = None,
               noise: float = 0.015, max_range: float = 80.0) -> NDArray:
        """Ray-cast an RGB image seen from the camera rigidly attached to ``lidar_pose``."""
        cam_to_world = lidar_pose.compose(camera.lidar_to_camera.inverse())
        h, w = camera.height, camera.width
        v, u = np.indices((h, w), dtype=np.float64)
        d_cam = np.stack([(u + 0.5 - camera.cx) / camera.fx, (v + 0.5 - camera.cy) / camera.fy, np.ones_like(u)], -1).reshape(-1, 3)
        d = d_cam @ cam_to_world.matrix.T
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        o = cam_to_world.translation
        n = d.shape[0]
        best_t = np.full(n, max_range)
        kind = np.full(n, -1)
        obj = np.zeros(n, np.int64)

        def take(t, k, idx):
            better = (t > 1e-6) & (t < best_t)
            best_t[better] = t[better]
            kind[better] = k
            obj[better] = idx

        with np.errstate(divide="ignore", invalid="ignore"):
            tg = np.where(d[:, 2] < 0, -o[2] / d[:, 2], np.inf)
        take(tg, GROUND, 0)

        near = np.flatnonzero(np.linalg.norm(self.origins - o[:2], axis=1) < max_range + 60.0)
        for pi in near:
            place = self.places[pi]
            for ti, (x, y, tr, th_, cr, *_rest) in enumerate(place.trees):
                # trunk: vertical cylinder, z in [0, th_]
                ox, oy = o[0] - x, o[1] - y
                a = d[:, 0] ** 2 + d[:, 1] ** 2
                b = 2 * (ox * d[:, 0] + oy * d[:, 1])
                cc = ox * ox + oy * oy - tr * tr
                disc = b * b - 4 * a * cc
                with np.errstate(invalid="ignore", divide="ignore"):
                    t = (-b - np.sqrt(disc)) / (2 * a)
                z = o[2] + t * d[:, 2]
                t = np.where((disc > 0) & (z >= 0) & (z <= th_), t, np.inf)
                take(t, TRUNK, ti)
                take(_sphere_hit(o, d, np.array([x, y, th_ + 0.7 * cr]), cr), CROWN, ti)
            for ri, (x, y, r, *_rest) in enumerate(place.rocks):
                t = _sphere_hit(o, d, np.array([x, y, -0.3 * r]), r)
                z = o[2] + t * d[:, 2]
                take(np.where(z > 0, t, np.inf), ROCK, ri)

        img = np.tile(SKY, (n, 1))
        hit = kind >= 0
        P = o + best_t[hit, None] * d[hit]
        img[hit] = self.colour(P, kind[hit], obj[hit])
        if rng is not None and noise > 0:
            img = img + rng.normal(scale=noise, size=img.shape)
        return (np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8).reshape(h, w, 3)


def _sphere_hit(o: NDArray, d: NDArray, center: NDArray, r: float) -> NDArray:
    oc = o - center
    b = d @ oc
    c = oc @ oc - r * r
    disc = b * b - c
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(disc)
    return np.where(disc > 0, t, np.inf)


def root_pose(world: World, place: int, yaw_deg: float = 0.0) -> RigidTransform:
    x, y = world.origins[place]
    return RigidTransform.from_yaw(yaw_deg, (x, y, SENSOR_HEIGHT))


def revisit_pose(world: World, place: int, rng: np.random.Generator, max_offset: float = 2.0) -> RigidTransform:
    """A nearby sensor pose with arbitrary heading (revisits may face any direction)."""
    x, y = world.origins[place]
    r = max_offset * math.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * math.pi)
    return RigidTransform.from_yaw(float(rng.uniform(-180, 180)), (x + r * math.cos(a), y + r * math.sin(a), SENSOR_HEIGHT))


def corrupt(rng: np.random.Generator) -> RigidTransform:
    """A pose error far outside the registration tolerance (used for mismatched samples)."""
    if rng.uniform() < 0.5:
        yaw = float(rng.uniform(20, 180) * rng.choice([-1, 1]))
        r, a = rng.uniform(0, 3), rng.uniform(0, 2 * math.pi)
    else:
        yaw = float(rng.uniform(-10, 10))
        r, a = rng.uniform(4, 8), rng.uniform(0, 2 * math.pi)
    return RigidTransform.from_yaw(yaw, (r * math.cos(a), r * math.sin(a), 0.0))


def verification_population(world: World, places, views: int, rng: np.random.Generator,
                            camera: CameraModel | None = None, provider=None, **measure_kwargs):
    """(MCS, nu, label, place) samples: for each view one matched, one mismatched
    (same place, corrupted pose) and one unmatched (another place's submap)."""
    from .verification import BaselineProvider, measure, slic_segment
    from .errors import EmptyOverlap

    camera = camera or default_camera()
    provider = provider or BaselineProvider()
    places = list(places)
    out = []
    for p in places:
        root = root_pose(world, p)
        cloud = world.sample_submap(root, rng)
        for _ in range(views):
            q = revisit_pose(world, p, rng)
            img = world.render(camera, q, rng)
            sp = slic_segment(img)
            sp = sp.with_features(provider.image_features(img))
            truth = root.inverse().compose(q)
            others = [o for o in places if o != p] or [o for o in range(len(world.places)) if o != p]
            other = int(rng.choice(others))
            other_cloud = world.sample_submap(root_pose(world, other), rng)
            cases = [
                ("matched", cloud, truth),
                ("mismatched", cloud, truth.compose(corrupt(rng))),
                ("unmatched", other_cloud, truth),
            ]
            for label, c, T in cases:
                try:
                    f = measure(img, c, T.inverse(), camera, provider, superpixels=sp, **measure_kwargs)
                except EmptyOverlap:
                    f = None
                out.append((0.0, 0.0, label, p) if f is None else (f.mcs, f.nu, label, p))
    return out


# -- planted embeddings (stand-in for a learned keypoint / global head) ----------------

def _unit_vector(seed: list[int], dim: int) -> NDArray:
    v = np.random.default_rng(seed).normal(size=dim)
    return v / np.linalg.norm(v)


def landmarks(world: World, place: int) -> NDArray:
    """World positions of repeatable structure: crown centres, trunk feet, rock tops."""
    p = world.places[place]
    t = p.trees
    crowns = np.column_stack([t[:, 0], t[:, 1], t[:, 3] + 0.7 * t[:, 4]])
    feet = np.column_stack([t[:, 0], t[:, 1], np.full(t.shape[0], 0.5)])
    rocks = np.column_stack([p.rocks[:, 0], p.rocks[:, 1], 0.7 * p.rocks[:, 2]])
    return np.concatenate([crowns, feet, rocks])


def planted_keypoints(world: World, place: int, pose: RigidTransform, rng: np.random.Generator,
                      radius: float = 20.0, position_noise: float = 0.03, descriptor_noise: float = 0.01,
                      distractors: int = 16, budget: int = 128):
    """Keypoints a well-trained detector would return for a submap at ``pose``."""
    from .descriptors import LOCAL_DIM, Keypoints

    lm = landmarks(world, place)
    ids = np.flatnonzero(np.linalg.norm(lm[:, :2] - pose.translation[:2], axis=1) <= radius)
    ids = ids[: max(0, budget - distractors)]
    pos = pose.inverse().apply(lm[ids]) if ids.size else np.zeros((0, 3))
    pos = pos + rng.normal(scale=position_noise, size=pos.shape)
    desc = np.array([_unit_vector([world.seed, place, int(i)], LOCAL_DIM) for i in ids]).reshape(-1, LOCAL_DIM)
    desc = desc + rng.normal(scale=descriptor_noise, size=desc.shape)
    r = radius * np.sqrt(rng.uniform(size=distractors))
    a = rng.uniform(0, 2 * math.pi, distractors)
    dpos = np.column_stack([r * np.cos(a), r * np.sin(a), rng.uniform(-SENSOR_HEIGHT, 6.0, distractors)])
    ddesc = rng.normal(size=(distractors, LOCAL_DIM))
    return Keypoints(np.concatenate([pos, dpos]), np.concatenate([desc, ddesc]))


def planted_global(world: World, place: int, rng: np.random.Generator, noise: float = 0.02):
    from .descriptors import GLOBAL_DIM, GlobalDescriptor

    v = _unit_vector([world.seed, place, 1_000_003], GLOBAL_DIM)
    return GlobalDescriptor(v + rng.normal(scale=noise, size=GLOBAL_DIM))


def adversarial(keypoints, offset: RigidTransform):
    """Same descriptors, positions moved by a wrong rigid offset: RANSAC then
    finds a self-consistent but wrong relative pose."""
    from .descriptors import Keypoints

    return Keypoints(offset.apply(keypoints.positions), keypoints.descriptors, keypoints.saliency)


ADVERSARIAL_OFFSET = RigidTransform.from_yaw(120.0, (6.0, -3.0, 0.0))


# -- on-disk scenario ---------------------------------------------------------------

def write_scenario(out: str | Path, *, n_map: int = 20, n_revisit: int = 14, n_corrupt: int = 3,
                   n_unrelated: int = 3, n_train_places: int = 12, train_views: int = 3, seed: int = 0,
                   map_radius: float = 20.0, query_radius: float = 15.0) -> dict:
    """Write a complete wake-up scenario: prior map inputs, query triples with
    ground truth, calibration, an SVC training table and a pipeline config.

    Revisits sit at map places ``0..n_revisit-1``; corrupted queries at the
    next ``n_corrupt`` map places (with adversarial keypoint files);
    unrelated queries at places absent from the map. Training samples come
    from a further set of places never used by the queries.
    """
    from . import io

    if n_revisit + n_corrupt > n_map:
        raise ValueError("more revisit/corrupted queries than map places")
    out = Path(out)
    (out / "map").mkdir(parents=True, exist_ok=True)
    (out / "queries").mkdir(parents=True, exist_ok=True)
    total = n_map + n_unrelated + n_train_places
    world = World.generate(total, seed=seed)
    rng = np.random.default_rng([seed, 1])
    camera = default_camera()
    camera.save(out / "camera.calib")

    pose_lines = ["session prior"]
    for p in range(n_map):
        root = root_pose(world, p, yaw_deg=float(rng.uniform(-180, 180)))
        stem = out / "map" / f"submap_{p:02d}"
        io.write_cloud(stem.with_suffix(".r3pc"), world.sample_submap(root, rng, radius=map_radius))
        kp = planted_keypoints(world, p, root, rng, radius=map_radius)
        io.write_features(stem.with_suffix(".keypoints.r3ft"), kp.to_matrix())
        io.write_features(stem.with_suffix(".global.r3ft"), planted_global(world, p, rng).vector[None, :])
        pose_lines.append(f"{p} submap_{p:02d}.r3pc {io.format_transform(root)}")
    (out / "map" / "poses.txt").write_text("\n".join(pose_lines) + "\n")

    kinds = (
        [("matched", p) for p in range(n_revisit)]
        + [("mismatched", n_revisit + i) for i in range(n_corrupt)]
        + [("unmatched", n_map + i) for i in range(n_unrelated)]
    )
    query_lines = []
    for qi, (label, p) in enumerate(kinds):
        q = revisit_pose(world, p, rng)
        stem = out / "queries" / f"q{qi:02d}"
        io.write_cloud(stem.with_suffix(".r3pc"), world.sample_submap(q, rng, radius=query_radius))
        io.write_ppm(stem.with_suffix(".ppm"), world.render(camera, q, rng))
        kp = planted_keypoints(world, p, q, rng, radius=query_radius)
        if label == "mismatched":
            kp = adversarial(kp, ADVERSARIAL_OFFSET)
        io.write_features(stem.with_suffix(".keypoints.r3ft"), kp.to_matrix())
        io.write_features(stem.with_suffix(".global.r3ft"), planted_global(world, p, rng).vector[None, :])
        query_lines.append(f"q{qi:02d} queries/q{qi:02d}.r3pc queries/q{qi:02d}.ppm {io.format_transform(q)} {label}")
    (out / "queries.txt").write_text("\n".join(query_lines) + "\n")

    train_places = range(n_map + n_unrelated, total)
    samples = verification_population(world, train_places, train_views, np.random.default_rng([seed, 2]), camera)
    rows = ["mcs,nu,label"] + [f"{m!r},{n!r},{lab}" for m, n, lab, _ in samples]
    (out / "train.csv").write_text("\n".join(rows) + "\n")
    (out / "config.txt").write_text("features.provider = file\nverification.provider = baseline\n")
    return {"world": world, "queries": kinds}
