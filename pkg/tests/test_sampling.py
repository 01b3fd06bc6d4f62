"""Farthest-point sampling, labeled query points, jitter, and unprojection."""

import numpy as np
import pytest

from pointsdf.cameras import look_at_camera
from pointsdf.sampling import (
    SeedPointSet,
    farthest_point_sample,
    jitter_points,
    sample_query_points,
    seed_points_from_views,
    unproject_depth,
)
from pointsdf.scene import ConstantAlbedo, Scene, SceneObject, render_ground_truth
from pointsdf.shapes import Plane, Sphere


def brute_force_fps(points, spacing, start):
    """Independent greedy max-min reference."""
    selected = [start]
    dist = np.linalg.norm(points - points[start], axis=1)
    while True:
        nxt = int(np.argmax(dist))
        if dist[nxt] < spacing:
            break
        selected.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return selected


class TestFps:
    def test_single_point(self):
        pts, idx = farthest_point_sample(np.array([[1.0, 2.0, 3.0]]), 0.1, 0)
        assert len(pts) == 1 and idx[0] == 0

    def test_collinear_trace(self):
        # brute-force max-min trace from index 0: pick 3, then max-min 1.0 < 1.5
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [3.0, 0, 0]])
        seed = 11  # default_rng(11).integers(4) == 0, so the start index is 0
        assert np.random.default_rng(seed).integers(4) == 0
        _, idx = farthest_point_sample(pts, 1.5, seed)
        assert idx.tolist() == [0, 3]

    def test_min_pairwise_spacing(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1, 1, size=(300, 3))
        sel, _ = farthest_point_sample(pts, 0.4, 7)
        d = np.linalg.norm(sel[:, None] - sel[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 0.4

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_brute_force_reference(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 1, size=(150, 3))
        start_rng = np.random.default_rng(seed + 100)
        start = int(start_rng.integers(len(pts)))
        ref = brute_force_fps(pts, 0.25, start)
        _, idx = farthest_point_sample(pts, 0.25, np.random.default_rng(seed + 100))
        assert idx.tolist() == ref

    def test_max_points_cap(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-1, 1, size=(500, 3))
        sel, _ = farthest_point_sample(pts, 1e-6, 0, max_points=40)
        assert len(sel) == 40


class TestQuerySamples:
    def test_sphere_labels_exact(self):
        x, s = sample_query_points(Sphere(radius=0.5), 400, (0.05, 0.001), 0)
        assert np.allclose(s, np.linalg.norm(x, axis=1) - 0.5, atol=1e-12)

    def test_balanced_counts(self):
        _, s = sample_query_points(Sphere(radius=0.5), 1000, (0.05, 0.001), 1)
        pos = int((s > 0).sum())
        neg = int((s <= 0).sum())
        assert abs(pos - neg) <= 1
        assert pos + neg == 1000

    def test_small_variance_near_surface(self):
        _, s = sample_query_points(Sphere(radius=0.5), 200, (1e-14,), 2)
        assert np.max(np.abs(s)) < 1e-6

    def test_plane_skips_balancing_with_warning(self):
        with pytest.warns(UserWarning, match="interior"):
            x, s = sample_query_points(Plane(offset=0.0), 100, (0.01,), 3)
        assert len(x) == 100

    def test_offset_variance_statistics(self):
        # displacement variance should match the requested Gaussian variance
        shape = Sphere(radius=0.5)
        rng = np.random.default_rng(4)
        x, s = sample_query_points(shape, 20000, (0.005,), rng)
        # displacement along the normal is s (distance from surface)
        assert np.var(s) == pytest.approx(0.005, rel=0.1)


class TestJitter:
    def test_zero_variance_identity(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        out = jitter_points(pts, 0.0, 1)
        assert np.array_equal(out, pts)

    def test_deterministic_under_seed(self):
        pts = np.random.default_rng(0).normal(size=(50, 3))
        a = jitter_points(pts, 0.01, 42)
        b = jitter_points(pts, 0.01, 42)
        assert np.array_equal(a, b)

    def test_sample_variance(self):
        pts = np.zeros((10000, 3))
        out = jitter_points(pts, 0.005, 3)
        assert np.var(out) == pytest.approx(0.005, rel=0.1)


class TestUnproject:
    def _scene_views(self, n=3):
        scene = Scene(
            (SceneObject(Sphere(radius=0.5), ConstantAlbedo((0.8, 0.2, 0.2))),),
            render_bounds=((-1, -1, -1), (1, 1, 1)),
        )
        cams = []
        for a in np.linspace(0, 2 * np.pi, n, endpoint=False):
            pos = np.array([np.cos(a), np.sin(a), 0.6])
            pos *= 1.8 / np.linalg.norm(pos)
            cams.append(look_at_camera(pos, (0, 0, 0), 64, 64, 45.0))
        views = [render_ground_truth(scene, c) for c in cams]
        return scene, cams, views

    def test_center_pixel_geometry(self):
        from pointsdf.cameras import Camera

        k = np.array([[60.0, 0, 31.5], [0, 60.0, 31.5], [0, 0, 1]])
        pose = np.eye(4)
        pose[:3, 3] = [0, 0, -2.0]
        cam = Camera(k, pose, 64, 64)
        depth = np.full((64, 64), np.inf)
        depth[31, 31] = 1.5  # pixel center == principal point, ray along +z
        img = np.zeros((64, 64, 3))
        out = unproject_depth(img, depth, cam, 1, spacing=None)
        assert np.allclose(out.points[0], [0, 0, -0.5], atol=1e-9)

    def test_reprojection_roundtrip(self):
        _, cams, views = self._scene_views()
        img, dep = views[0]
        out = unproject_depth(img, dep, cams[0], 2, spacing=None)
        uv, _, valid = cams[0].project(out.points)
        assert valid.all()
        # each point reprojects onto a pixel center (well within the 0.5 px contract)
        offset = np.abs(uv - 0.5 - np.round(uv - 0.5))
        assert np.max(offset) < 1e-6

    def test_points_on_sphere(self):
        _, cams, views = self._scene_views()
        seeds = seed_points_from_views(
            [v[0] for v in views], [v[1] for v in views], cams, stride=2, spacing=0.025, seed=0
        )
        r = np.linalg.norm(seeds.points, axis=1)
        assert np.max(np.abs(r - 0.5)) < 1e-3
        assert len(seeds) > 300

    def test_all_miss_error(self):
        cam = look_at_camera((0, -2, 0), (0, 0, 0), 16, 16)
        with pytest.raises(ValueError, match="finite"):
            unproject_depth(np.zeros((16, 16, 3)), np.full((16, 16), np.inf), cam, 1)

    def test_ply_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        s = SeedPointSet(rng.uniform(-1, 1, (40, 3)), rng.uniform(0, 1, (40, 3)))
        s.save_ply(tmp_path / "pts.ply")
        back = SeedPointSet.load_ply(tmp_path / "pts.ply")
        assert np.allclose(back.points, s.points, atol=1e-6)
        assert np.allclose(back.colors, s.colors, atol=1 / 255)
