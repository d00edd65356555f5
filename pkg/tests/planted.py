"""Planted registration problems shared by the registration and acceptance tests."""

from __future__ import annotations

import numpy as np

from r3loc import synthetic as S
from r3loc.geometry import PointCloud, RigidTransform
from r3loc.registration import CorrespondenceSet


def random_problem(rng, n=400, noise=0.02):
    """Random cloud, planted transform, independent noise on the moved copy."""
    cand = rng.uniform(-10, 10, size=(n, 3))
    truth = RigidTransform.random(rng, 5.0)
    query = truth.inverse().apply(cand) + rng.normal(scale=noise, size=cand.shape)
    return PointCloud(query), PointCloud(cand), truth


def perturb(rng, T, max_trans=0.3, max_rot_deg=3.0):
    axis = rng.normal(size=3)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    P = RigidTransform.from_axis_angle(axis, np.deg2rad(rng.uniform(0, max_rot_deg)), d * rng.uniform(0, max_trans))
    return P.compose(T)


class ForestScenes:
    """Query/candidate submap pairs from the synthetic forest, with truth T_{t1,q}."""

    def __init__(self, n_places=20, seed=3):
        self.world = S.World.generate(n_places, seed=seed)

    def pair(self, place, rng):
        w = self.world
        root = S.root_pose(w, place, yaw_deg=float(rng.uniform(-180, 180)))
        q = S.revisit_pose(w, place, rng)
        cand = w.sample_submap(root, rng, radius=20.0)
        query = w.sample_submap(q, rng, radius=15.0)
        return query, cand, root.inverse().compose(q), root, q


def clustered_correspondences(rng, world, place, root, q, inliers=12, outliers=12, cluster_radius=2.5, noise=0.25):
    """Keypoint correspondences from a tight cluster of landmarks with heavy position
    noise: enough for a RANSAC consensus, too short a baseline for an accurate rotation."""
    lm = S.landmarks(world, place)
    qlm = q.inverse().apply(lm)
    near = np.flatnonzero(np.linalg.norm(qlm[:, :2], axis=1) < 12.0)
    centre = qlm[near[int(rng.integers(near.size))]]
    pts_q = centre + rng.uniform(-cluster_radius, cluster_radius, size=(inliers, 3))
    truth = root.inverse().compose(q)
    pts_c = truth.apply(pts_q)
    pts_q = pts_q + rng.normal(scale=noise, size=pts_q.shape)
    pts_c = pts_c + rng.normal(scale=noise, size=pts_c.shape)
    out_q = rng.uniform(-15, 15, size=(outliers, 3))
    out_c = rng.uniform(-20, 20, size=(outliers, 3))
    Q = np.vstack([pts_q, out_q])
    C = np.vstack([pts_c, out_c])
    n = inliers + outliers
    corr = CorrespondenceSet.from_pairs([(i, i, 0.0) for i in range(n)])
    return corr, Q, C
