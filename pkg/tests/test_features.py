"""FPFH descriptors and descriptor matching."""

import numpy as np
import pytest

from core.errors import EmptyDescriptors, MissingNormals, NonPositiveRadius
from core.features import (
    FPFH_DIM, compute_fpfh, match_correspondences, mutual_matches, pair_features,
)
from core.geometry import PointCloud, RigidTransform, apply_transform, estimate_normals
from tests.conftest import floor_points


def _box_corner_cloud(rng: np.random.Generator) -> PointCloud:
    """Three mutually perpendicular faces meeting at the origin, with
    normals: a shape with varied local geometry."""
    n = 700
    a = rng.random((n, 2)) * 0.3
    floor = np.column_stack([a[:, 0], a[:, 1], np.zeros(n)])
    wall_x = np.column_stack([np.zeros(n), a[:, 0], a[:, 1]])
    wall_y = np.column_stack([a[:, 1], np.zeros(n), a[:, 0]])
    pts = np.vstack([floor, wall_x, wall_y])
    return estimate_normals(PointCloud(pts), 12, viewpoint=(1.0, 1.0, 1.0))


# ── Pair features ────────────────────────────────────────────────────────

class TestPairFeatures:
    def test_order_independent(self, rng):
        p, q = rng.random((50, 3)), rng.random((50, 3))
        n1 = rng.normal(size=(50, 3))
        n2 = rng.normal(size=(50, 3))
        n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
        n2 /= np.linalg.norm(n2, axis=1, keepdims=True)
        fwd = pair_features(p, n1, q, n2)
        rev = pair_features(q, n2, p, n1)
        for a, b in zip(fwd[:3], rev[:3]):
            assert np.allclose(a, b, atol=1e-12)

    def test_tied_endpoints_keep_their_frame_under_motion(self, rng):
        p, q = np.array([[0.0, 0.0, 0.0]]), np.array([[0.05, 0.0, 0.0]])
        # both normals at the same angle to the connecting line
        n_s, n_t = np.array([[0.6, 0.8, 0.0]]), np.array([[0.6, 0.0, 0.8]])
        ref = pair_features(p, n_s, q, n_t)
        assert ref[1][0] == pytest.approx(0.6)
        for _ in range(50):
            t = RigidTransform.from_euler(*rng.uniform(-np.pi, np.pi, size=3),
                                          rng.uniform(-1.0, 1.0, size=3))
            moved = pair_features(t.apply(p), n_s @ t.rotation.T, t.apply(q), n_t @ t.rotation.T)
            for a, b in zip(ref[:3], moved[:3]):
                assert np.allclose(a, b, atol=1e-9)

    def test_coplanar_pair(self):
        p = np.array([[0.0, 0.0, 0.0]])
        q = np.array([[1.0, 0.0, 0.0]])
        n = np.array([[0.0, 0.0, 1.0]])
        alpha, phi, theta, valid = pair_features(p, n, q, n)
        assert valid[0]
        assert alpha[0] == pytest.approx(0.0, abs=1e-12)
        assert phi[0] == pytest.approx(0.0, abs=1e-12)
        assert theta[0] == pytest.approx(0.0, abs=1e-12)


# ── compute_fpfh ─────────────────────────────────────────────────────────

class TestComputeFpfh:
    def test_shape_and_block_sums(self, rng):
        cloud = _box_corner_cloud(rng)
        desc = compute_fpfh(cloud, 0.05)
        assert desc.shape == (len(cloud), FPFH_DIM)
        sums = desc.reshape(len(cloud), 3, 11).sum(axis=2)
        nonzero = desc.any(axis=1)
        assert np.allclose(sums[nonzero], 100.0)

    def test_interior_plane_points_agree(self):
        pts = floor_points((0.0, 0.6), (0.0, 0.6), spacing=0.01)
        cloud = PointCloud(pts, np.tile([0.0, 0.0, 1.0], (len(pts), 1)))
        desc = compute_fpfh(cloud, 0.05)
        interior = np.flatnonzero(np.all((pts[:, :2] > 0.15) & (pts[:, :2] < 0.45), axis=1))
        ref = desc[interior[0]]
        assert np.max(np.abs(desc[interior] - ref).sum(axis=1)) < 1e-3

    def test_rigid_motion_invariance(self, rng):
        cloud = _box_corner_cloud(rng)
        t = RigidTransform.from_euler(0.3, -0.2, 1.1, (0.5, -1.0, 2.0))
        a = compute_fpfh(cloud, 0.05)
        b = compute_fpfh(apply_transform(cloud, t), 0.05)
        assert np.max(np.abs(a - b).sum(axis=1)) < 1e-6

    def test_isolated_point_is_zero(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.0, 0.01, 0.0], [5.0, 5.0, 5.0]])
        cloud = PointCloud(pts, np.tile([0.0, 0.0, 1.0], (4, 1)))
        desc = compute_fpfh(cloud, 0.05)
        assert not desc[3].any()
        assert desc[0].any()

    def test_errors(self):
        with pytest.raises(MissingNormals):
            compute_fpfh(PointCloud(np.zeros((3, 3))), 0.1)
        cloud = PointCloud(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]]))
        with pytest.raises(NonPositiveRadius):
            compute_fpfh(cloud, -1.0)


# ── match_correspondences ────────────────────────────────────────────────

class TestMatchCorrespondences:
    def test_identical_lists(self, rng):
        d = rng.random((40, FPFH_DIM))
        corr = match_correspondences(d, d)
        assert corr.pairs == [(i, i, 0.0) for i in range(40)]

    def test_matches_brute_force(self, rng):
        src, dst = rng.random((300, FPFH_DIM)), rng.random((500, FPFH_DIM))
        corr = match_correspondences(src, dst)
        for s, t, dist in corr.pairs:
            all_d = np.sqrt(((dst - src[s]) ** 2).sum(axis=1))
            assert t == int(np.argmin(all_d))
            assert dist == pytest.approx(all_d.min(), abs=1e-9)

    def test_single_source(self, rng):
        dst = rng.random((100, FPFH_DIM))
        src = dst[37:38] + 1e-3
        corr = match_correspondences(src, dst)
        assert len(corr) == 1
        assert corr.pairs[0][1] == 37

    def test_empty(self):
        with pytest.raises(EmptyDescriptors):
            match_correspondences(np.zeros((0, FPFH_DIM)), np.ones((2, FPFH_DIM)))


class TestMutualMatches:
    def test_identical_lists(self, rng):
        d = rng.random((40, FPFH_DIM))
        assert mutual_matches(d, d).pairs == [(i, i, 0.0) for i in range(40)]

    def test_one_sided_match_is_dropped(self):
        dst = np.zeros((1, FPFH_DIM))
        src = np.vstack([np.full(FPFH_DIM, 0.1), np.full(FPFH_DIM, 0.2)])
        assert match_correspondences(src, dst).dst_ids.tolist() == [0, 0]
        corr = mutual_matches(src, dst)
        assert corr.src_ids.tolist() == [0]
        assert corr.dst_ids.tolist() == [0]

    def test_repeated_descriptors_are_dropped(self, rng):
        flat, edge = rng.random(FPFH_DIM), rng.random(FPFH_DIM)
        dst = np.vstack([flat, flat, flat, edge])
        src = np.vstack([flat, edge])
        assert mutual_matches(src, dst).pairs == [(1, 3, 0.0)]

    def test_empty(self):
        with pytest.raises(EmptyDescriptors):
            mutual_matches(np.ones((2, FPFH_DIM)), np.zeros((0, FPFH_DIM)))


def test_descriptor_length_constant():
    assert FPFH_DIM == 33
