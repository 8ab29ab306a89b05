"""Floor fitting, height filtering, top-down projection and merging."""

import math

import numpy as np
import pytest

from core.errors import EmptyCloud, LengthMismatch, NoConstrainedPlane, TooFewPoints
from core.geometry import PointCloud, RigidTransform, voxel_downsample
from core.mapping import (
    PlaneModel, filter_heights, merge_clouds, plane_basis, project_into, project_topdown,
    ransac_plane, signed_height,
)
from tests.conftest import floor_points

UP = PlaneModel([0.0, 0.0, 1.0], 0.0)


# ── ransac_plane ─────────────────────────────────────────────────────────

class TestRansacPlane:
    def test_noisy_floor_with_outliers(self, rng):
        floor = np.column_stack([rng.uniform(-1, 1, size=(1000, 2)), rng.normal(scale=0.002, size=1000)])
        outliers = rng.uniform(-1, 1, size=(100, 3))
        cloud = PointCloud(np.vstack([floor, outliers]))
        plane, ids = ransac_plane(cloud, 0.01, viewpoint=(0.0, 0.0, 1.0))
        assert math.degrees(plane.tilt(np.array([0.0, 0.0, 1.0]))) < 1.0
        assert len(ids) >= 950
        assert plane.normal[2] > 0

    def test_three_points(self):
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.1], [0.0, 1.0, 0.0]])
        plane, ids = ransac_plane(PointCloud(pts), 0.5, viewpoint=(0.0, 0.0, 5.0))
        assert ids.tolist() == [0, 1, 2]
        assert np.allclose(plane.heights(pts), 0.0, atol=1e-12)

    def test_two_points(self):
        with pytest.raises(TooFewPoints):
            ransac_plane(PointCloud(np.zeros((2, 3))), 0.01)

    def test_wall_only_has_no_floor(self):
        ys, zs = np.meshgrid(np.linspace(0, 1, 20), np.linspace(0, 1, 20))
        wall = np.column_stack([np.zeros(ys.size), ys.ravel(), zs.ravel()])
        with pytest.raises(NoConstrainedPlane):
            ransac_plane(PointCloud(wall), 0.01)

    def test_never_exceeds_tilt(self, rng):
        pts = rng.uniform(-1, 1, size=(300, 3))
        plane, _ = ransac_plane(PointCloud(pts), 0.05, max_tilt=math.radians(30.0))
        assert plane.tilt(np.array([0.0, 0.0, 1.0])) <= math.radians(30.0) + 1e-12

    def test_same_seed_same_plane(self, rng):
        pts = rng.uniform(-1, 1, size=(300, 3))
        a, ia = ransac_plane(PointCloud(pts), 0.05, seed=4)
        b, ib = ransac_plane(PointCloud(pts), 0.05, seed=4)
        assert np.array_equal(a.normal, b.normal)
        assert np.array_equal(ia, ib)


# ── Heights ──────────────────────────────────────────────────────────────

class TestHeights:
    def test_signed_height(self):
        assert signed_height((0.3, -0.2, 0.0), UP) == 0.0
        assert signed_height((0.0, 0.0, 0.05), UP) == pytest.approx(0.05)

    def test_signed_height_matches_foot_of_perpendicular(self, rng):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        plane = PlaneModel(n, 0.3)
        on_plane = -0.3 * n
        for p in rng.uniform(-2, 2, size=(20, 3)):
            foot = p - (p @ n + 0.3) * n
            distance = np.linalg.norm(p - foot)
            side = np.sign((p - on_plane) @ n)
            assert signed_height(p, plane) == pytest.approx(side * distance, abs=1e-12)

    def test_filter_band_and_ceiling(self):
        heights = [-0.02, -0.01, 0.0, 0.005, 0.03, 0.05, 1.5, 1.6]
        cloud = PointCloud(np.array([[0.0, 0.0, h] for h in heights]))
        kept = filter_heights(cloud, UP)
        assert kept.points[:, 2].tolist() == [-0.02, 0.05, 1.5]

    def test_filter_preserves_order(self, rng):
        pts = rng.uniform(-1, 2, size=(200, 3))
        kept = filter_heights(PointCloud(pts), UP)
        h = pts[:, 2]
        mask = ~(((h >= -0.01) & (h <= 0.03)) | (h > 1.5))
        assert np.array_equal(kept.points, pts[mask])

    def test_orientation_toward_viewpoint(self):
        down = PlaneModel([0.0, 0.0, -1.0], 0.0)
        assert down.oriented_toward((0.0, 0.0, 1.0)).normal[2] == 1.0


# ── Projection ───────────────────────────────────────────────────────────

class TestProjectTopdown:
    def test_single_point(self):
        grid = project_topdown(PointCloud(np.array([[0.3, 0.2, 0.1]])), UP)
        assert grid.shape == (1, 1)
        assert grid.occupied[0, 0]

    def test_cells_apart_along_first_axis(self):
        pts = np.array([[0.0, 0.0, 0.1], [1.234, 0.0, 0.1]])
        grid = project_topdown(PointCloud(pts), UP)
        (r0, c0), (r1, c1) = grid.cells(pts)
        assert c1 - c0 == 123
        assert r0 == r1
        assert int(grid.occupied.sum()) == 2

    def test_same_cell(self):
        pts = np.array([[0.001, 0.001, 0.2], [0.004, 0.006, 0.5]])
        grid = project_topdown(PointCloud(pts), UP)
        assert int(grid.occupied.sum()) == 1

    def test_every_point_lands_in_bounds(self, rng):
        pts = rng.uniform(-1, 1, size=(500, 3))
        grid = project_topdown(PointCloud(pts), UP)
        rc = grid.cells(pts)
        assert np.all((rc >= 0) & (rc < np.array(grid.shape)))
        assert grid.occupied[rc[:, 0], rc[:, 1]].all()
        assert int(grid.occupied.sum()) <= len(pts)

    def test_cell_centers_near_points(self, rng):
        pts = rng.uniform(0, 0.3, size=(200, 3))
        grid = project_topdown(PointCloud(pts), UP)
        uv = grid.planar(pts)
        for r, c in zip(*np.nonzero(grid.occupied)):
            center = grid.cell_center(r, c)
            assert np.min(np.linalg.norm(uv - center, axis=1)) <= grid.resolution * math.sqrt(2) / 2 + 1e-12

    def test_empty_cloud(self):
        with pytest.raises(EmptyCloud):
            project_topdown(PointCloud.empty(), UP)

    def test_tilted_plane_basis(self):
        n = np.array([0.0, math.sin(0.1), math.cos(0.1)])
        basis = plane_basis(n)
        assert np.allclose(basis[0], [1.0, 0.0, 0.0])
        assert np.allclose(basis @ n, 0.0, atol=1e-12)
        assert plane_basis(np.array([1.0, 0.0, 0.0]))[0] @ np.array([0.0, 1.0, 0.0]) == pytest.approx(1.0)

    def test_project_into_keeps_frame(self):
        frame = project_topdown(PointCloud(floor_points((0.0, 0.5), (0.0, 0.3))), UP)
        grid = project_into(PointCloud(np.array([[0.105, 0.205, 0.2], [5.0, 5.0, 0.2]])), frame)
        assert grid.shape == frame.shape
        assert np.array_equal(grid.origin, frame.origin)
        assert np.flatnonzero(grid.occupied.ravel()).size == 1
        assert grid.occupied[grid.cell_of((0.105, 0.205, 0.2))]


# ── merge_clouds ─────────────────────────────────────────────────────────

class TestMergeClouds:
    def test_single_identity(self, rng):
        cloud = PointCloud(rng.random((300, 3)))
        merged = merge_clouds([cloud], [RigidTransform.identity()], 0.05)
        assert np.array_equal(merged.points, voxel_downsample(cloud, 0.05).points)

    def test_duplicates_collapse(self, rng):
        cloud = PointCloud(rng.random((300, 3)))
        ident = RigidTransform.identity()
        merged = merge_clouds([cloud, cloud], [ident, ident], 0.05)
        assert len(merged) == len(voxel_downsample(cloud, 0.05))

    def test_halves_cover_the_whole(self):
        full = floor_points((0.0, 1.0), (0.0, 0.5), spacing=0.01)
        left = full[full[:, 0] < 0.5]
        right = full[full[:, 0] >= 0.5]
        shift = RigidTransform(np.eye(3), np.array([0.5, 0.0, 0.0]))
        merged = merge_clouds([PointCloud(left), PointCloud(right - [0.5, 0.0, 0.0])],
                              [RigidTransform.identity(), shift], 0.01)
        lo, hi = merged.points.min(axis=0), merged.points.max(axis=0)
        assert np.all(np.abs(lo[:2] - [0.0, 0.0]) <= 0.01)
        assert np.all(np.abs(hi[:2] - [1.0, 0.5]) <= 0.01)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            merge_clouds([PointCloud.empty()], [], 0.01)
