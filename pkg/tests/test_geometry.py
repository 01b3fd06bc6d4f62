"""Shape oracles, meshes, cameras, and the ground-truth renderer."""

import numpy as np
import pytest

from pointsdf.cameras import Camera, generate_ray, look_at_camera, ring_cameras
from pointsdf.images import load_depth, load_png, save_depth, save_png
from pointsdf.mesh import (
    MeshError,
    MeshShape,
    TriMesh,
    cube_mesh,
    icosphere,
    load_obj,
    load_ply,
    save_obj,
    save_ply,
)
from pointsdf.scene import CheckerAlbedo, ConstantAlbedo, Scene, SceneObject, render_ground_truth
from pointsdf.shapes import Box, Capsule, Plane, ShapeUnion, Sphere, Torus, analytic_sdf


class TestAnalyticSdf:
    def test_sphere_center(self):
        assert analytic_sdf(Sphere(radius=0.5), np.zeros(3)) == pytest.approx(-0.5)

    def test_sphere_outside(self):
        assert analytic_sdf(Sphere(radius=0.5), np.array([1.0, 0, 0])) == pytest.approx(0.5)

    def test_plane_signed_height(self):
        p = Plane(normal=(0, 0, 1), offset=0.0)
        assert analytic_sdf(p, np.array([0.0, 0.0, -0.3])) == pytest.approx(-0.3)

    def test_box_inside_outside(self):
        b = Box(half_extents=(0.5, 0.5, 0.5))
        assert b.sdf(np.zeros(3)) == pytest.approx(-0.5)
        assert b.sdf(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.5)
        # corner distance
        assert b.sdf(np.array([1.0, 1.0, 1.0])) == pytest.approx(np.sqrt(3) * 0.5)

    def test_torus(self):
        t = Torus(major_radius=0.3, minor_radius=0.1)
        assert t.sdf(np.array([0.3, 0.0, 0.0])) == pytest.approx(-0.1)
        assert t.sdf(np.array([0.0, 0.0, 0.0])) == pytest.approx(0.2)

    def test_capsule(self):
        c = Capsule(point_a=(-0.3, 0, 0), point_b=(0.3, 0, 0), radius=0.1)
        assert c.sdf(np.zeros(3)) == pytest.approx(-0.1)
        assert c.sdf(np.array([0.5, 0.0, 0.0])) == pytest.approx(0.1)

    @pytest.mark.parametrize(
        "shape",
        [
            Sphere(radius=0.4),
            Box(half_extents=(0.3, 0.25, 0.2)),
            Torus(major_radius=0.3, minor_radius=0.12),
            Capsule(point_a=(-0.25, 0, 0), point_b=(0.25, 0.1, 0), radius=0.12),
        ],
        ids=["sphere", "box", "torus", "capsule"],
    )
    def test_magnitude_matches_dense_surface_sampling(self, shape):
        # |sdf(x)| should equal the distance to the closest of 10k surface samples
        rng = np.random.default_rng(0)
        surf = shape.sample_surface(10000, rng)
        xs = rng.uniform(-0.6, 0.6, size=(30, 3))
        d = np.abs(shape.sdf(xs))
        nearest = np.array([np.linalg.norm(surf - x, axis=1).min() for x in xs])
        # sampling resolution of 10k points on these shapes
        assert np.all(np.abs(d - nearest) < 0.02)

    def test_surface_samples_lie_on_surface(self):
        rng = np.random.default_rng(1)
        for shape in [Sphere(), Box(), Torus(), Capsule()]:
            pts = shape.sample_surface(500, rng)
            assert np.max(np.abs(shape.sdf(pts))) < 1e-9

    def test_union_min_of_children(self):
        u = ShapeUnion((Sphere(radius=0.2), Sphere(center=(1.0, 0, 0), radius=0.2)))
        assert u.sdf(np.array([0.5, 0.0, 0.0])) == pytest.approx(0.3)


class TestMesh:
    def test_cube_center_and_face(self):
        m = cube_mesh()
        assert m.is_watertight()
        assert m.sdf(np.zeros(3)) == pytest.approx(-0.5, abs=1e-12)
        assert m.sdf(np.array([1.0, 0.0, 0.0])) == pytest.approx(0.5, abs=1e-12)

    def test_icosphere_vs_analytic(self):
        # max chord deviation of the level-4 tessellation bounds the error
        m = icosphere(0.5, 4)
        assert m.sdf(np.array([0.6, 0.0, 0.0])) == pytest.approx(0.1, abs=2e-3)

    def test_icosphere_convergence(self):
        sphere = Sphere(radius=0.5)
        rng = np.random.default_rng(2)
        xs = rng.uniform(-0.7, 0.7, size=(60, 3))
        errs = []
        for level in (2, 3, 4):
            m = icosphere(0.5, level)
            errs.append(np.max(np.abs(m.sdf(xs) - sphere.sdf(xs))))
        assert errs[0] > errs[1] > errs[2]

    def test_winding_number_inside_outside(self):
        m = icosphere(0.5, 2)
        assert m.winding_number(np.zeros(3)) == pytest.approx(1.0, abs=1e-9)
        assert m.winding_number(np.array([2.0, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-9)

    def test_open_mesh_rejected(self):
        m = cube_mesh()
        open_mesh = TriMesh(m.vertices, m.faces[:-1])
        assert not open_mesh.is_watertight()
        with pytest.raises(MeshError):
            MeshShape(open_mesh)

    def test_normalize_unit_cube(self):
        m = cube_mesh(half=3.0, center=(5.0, -2.0, 1.0)).normalized_to_unit_cube()
        lo, hi = m.bounds()
        assert np.allclose(hi - lo, 1.0)
        assert np.allclose(0.5 * (hi + lo), 0.0)

    def test_obj_roundtrip(self, tmp_path):
        m = icosphere(0.4, 1)
        save_obj(tmp_path / "m.obj", m)
        m2 = load_obj(tmp_path / "m.obj")
        assert np.allclose(m.vertices, m2.vertices)
        assert np.array_equal(m.faces, m2.faces)

    def test_ply_roundtrip_with_colors(self, tmp_path):
        rng = np.random.default_rng(0)
        m = cube_mesh()
        m.vertex_colors = rng.uniform(size=(len(m.vertices), 3))
        save_ply(tmp_path / "m.ply", m)
        m2 = load_ply(tmp_path / "m.ply")
        assert np.allclose(m.vertices, m2.vertices, atol=1e-7)  # float32 storage
        assert np.array_equal(m.faces, m2.faces)
        assert np.allclose(m.vertex_colors, m2.vertex_colors, atol=1 / 255)


class TestCamera:
    def test_principal_ray_looks_down_z(self):
        k = np.array([[50.0, 0, 32.0], [0, 50.0, 24.0], [0, 0, 1]])
        cam = Camera(k, np.eye(4), 64, 48)
        # pixel whose center is the principal point
        ray = generate_ray(cam, 31, 23)  # center (31.5, 23.5) != pp; use exact:
        k2 = np.array([[50.0, 0, 31.5], [0, 50.0, 23.5], [0, 0, 1]])
        cam2 = Camera(k2, np.eye(4), 64, 48)
        ray = generate_ray(cam2, 31, 23)
        assert np.allclose(ray.direction, [0, 0, 1])

    def test_translated_pose(self):
        k = np.array([[50.0, 0, 31.5], [0, 50.0, 23.5], [0, 0, 1]])
        pose = np.eye(4)
        pose[:3, 3] = [0, 0, -2.0]
        cam = Camera(k, pose, 64, 48)
        ray = generate_ray(cam, 31, 23)
        assert np.allclose(ray.origin, [0, 0, -2.0])
        assert np.allclose(ray.direction, [0, 0, 1])

    def test_corner_pixel_pinhole(self):
        f, cx, cy = 40.0, 32.0, 32.0
        k = np.array([[f, 0, cx], [0, f, cy], [0, 0, 1]])
        cam = Camera(k, np.eye(4), 64, 64)
        ray = generate_ray(cam, 0, 0)
        expected = np.array([(0.5 - cx) / f, (0.5 - cy) / f, 1.0])
        expected /= np.linalg.norm(expected)
        assert np.allclose(ray.direction, expected)

    def test_out_of_bounds_pixel(self):
        cam = look_at_camera((0, -2, 0), (0, 0, 0), 32, 32)
        with pytest.raises(ValueError):
            generate_ray(cam, 32, 0)

    def test_pose_validation(self):
        k = np.array([[50.0, 0, 16.0], [0, 50.0, 16.0], [0, 0, 1]])
        bad = np.eye(4)
        bad[0, 0] = 2.0
        with pytest.raises(ValueError):
            Camera(k, bad, 32, 32)

    def test_project_unproject_roundtrip(self):
        cam = look_at_camera((0.3, -1.8, 0.9), (0, 0, -0.2), 96, 96, fov_deg=45)
        rng = np.random.default_rng(3)
        us = rng.integers(0, 96, 40)
        vs = rng.integers(0, 96, 40)
        o, d = cam.pixel_rays(us, vs)
        pts = o + rng.uniform(0.8, 2.5, size=(40, 1)) * d
        uv, depth, valid = cam.project(pts)
        assert valid.all()
        assert np.allclose(uv[:, 0], us + 0.5, atol=1e-6)
        assert np.allclose(uv[:, 1], vs + 0.5, atol=1e-6)

    def test_project_gradient_fd(self):
        cam = look_at_camera((0.5, -1.5, 1.0), (0, 0, 0), 64, 64)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.3, 0.3, (5, 3))
        jac = cam.project_gradient(pts)
        h = 1e-6
        for j in range(3):
            dp = np.zeros(3)
            dp[j] = h
            up, _, _ = cam.project(pts + dp)
            um, _, _ = cam.project(pts - dp)
            num = (up - um) / (2 * h)
            assert np.allclose(num, jac[:, :, j], rtol=1e-5, atol=1e-7)


class TestGroundTruthRender:
    def test_center_depth_sphere(self):
        # camera 2 units from a r=0.5 sphere: first hit at depth 1.5
        k = np.array([[80.0, 0, 31.5], [0, 80.0, 31.5], [0, 0, 1]])
        pose = np.eye(4)
        pose[:3, 3] = [0, 0, -2.0]
        cam = Camera(k, pose, 64, 64)
        scene = Scene((SceneObject(Sphere(radius=0.5), ConstantAlbedo((1, 0, 0))),))
        color, depth = render_ground_truth(scene, cam)
        assert depth[31, 31] == pytest.approx(1.5, abs=1e-6)
        assert np.allclose(color[31, 31], [1, 0, 0])

    def test_miss_gives_background_and_sentinel(self):
        cam = look_at_camera((0, -2, 0), (0, 0, 0), 32, 32, fov_deg=60)
        scene = Scene(
            (SceneObject(Sphere(radius=0.1), ConstantAlbedo((1, 1, 1))),),
            background=(0.2, 0.3, 0.4),
        )
        color, depth = render_ground_truth(scene, cam)
        assert np.isinf(depth[0, 0])
        assert np.allclose(color[0, 0], [0.2, 0.3, 0.4])

    def test_constant_albedo_uniform(self):
        cam = look_at_camera((0, -2, 0), (0, 0, 0), 48, 48, fov_deg=40)
        scene = Scene((SceneObject(Sphere(radius=0.4), ConstantAlbedo((0.1, 0.5, 0.9))),))
        color, depth = render_ground_truth(scene, cam)
        hit = np.isfinite(depth)
        assert hit.sum() > 100
        assert np.allclose(color[hit], [0.1, 0.5, 0.9])

    def test_hit_point_reprojection(self):
        cam = look_at_camera((0.4, -1.7, 0.8), (0, 0, 0), 64, 64)
        scene = Scene((SceneObject(Sphere(radius=0.45), ConstantAlbedo()),))
        _, depth = render_ground_truth(scene, cam)
        vs, us = np.nonzero(np.isfinite(depth))
        o, d = cam.pixel_rays(us, vs)
        pts = o + depth[vs, us][:, None] * d
        uv, _, _ = cam.project(pts)
        err = np.hypot(uv[:, 0] - (us + 0.5), uv[:, 1] - (vs + 0.5))
        assert err.max() < 1e-6

    def test_sphere_tracing_matches_mesh_render(self):
        # same tessellated geometry via both renderers agrees within chord error
        cam = look_at_camera((0, -1.8, 0.7), (0, 0, 0), 48, 48, fov_deg=40)
        ico = icosphere(0.4, 4)
        scene_mesh = Scene((SceneObject(MeshShape(ico), ConstantAlbedo()),))
        scene_true = Scene((SceneObject(Sphere(radius=0.4), ConstantAlbedo()),))
        _, d_mesh = render_ground_truth(scene_mesh, cam)
        _, d_true = render_ground_truth(scene_true, cam)
        both = np.isfinite(d_mesh) & np.isfinite(d_true)
        assert both.sum() > 200
        assert np.max(np.abs(d_mesh[both] - d_true[both])) < 5e-3

    def test_render_bounds_clip(self):
        cam = look_at_camera((0, -2, 1.2), (0, 0, -0.4), 48, 48, fov_deg=55)
        plane = SceneObject(Plane(offset=-0.5), CheckerAlbedo())
        unclipped = Scene((plane,))
        clipped = Scene((plane,), render_bounds=((-1, -1, -1), (1, 1, 1)))
        _, d_free = render_ground_truth(unclipped, cam)
        _, d_clip = render_ground_truth(clipped, cam)
        assert np.isfinite(d_free).sum() > np.isfinite(d_clip).sum()
        # clipped hits stay inside bounds
        vs, us = np.nonzero(np.isfinite(d_clip))
        o, d = cam.pixel_rays(us, vs)
        pts = o + d_clip[vs, us][:, None] * d
        assert np.all(np.abs(pts) <= 1.0 + 1e-6)

    def test_empty_scene_error(self):
        cam = look_at_camera((0, -2, 0), (0, 0, 0), 8, 8)
        with pytest.raises(ValueError):
            render_ground_truth(Scene(()), cam)


class TestImageIo:
    def test_png_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(20, 30, 3))
        save_png(tmp_path / "x.png", img)
        back = load_png(tmp_path / "x.png")
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-9

    def test_depth_roundtrip_with_inf(self, tmp_path):
        d = np.array([[1.5, np.inf], [0.25, 3.0]])
        save_depth(tmp_path / "d.depth", d)
        back = load_depth(tmp_path / "d.depth")
        assert np.isinf(back[0, 1])
        assert back[0, 0] == pytest.approx(1.5, abs=1e-7)

    def test_depth_truncated_file(self, tmp_path):
        d = np.ones((4, 4))
        save_depth(tmp_path / "d.depth", d)
        raw = (tmp_path / "d.depth").read_bytes()
        (tmp_path / "bad.depth").write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            load_depth(tmp_path / "bad.depth")

    def test_cameras_json_roundtrip_exact(self, tmp_path):
        from pointsdf.cameras import load_cameras, save_cameras

        cams = ring_cameras(3, 1.8, 35.0, (0, 0, -0.2), 96, 96, 45.0)
        save_cameras(tmp_path / "c.json", cams)
        back = load_cameras(tmp_path / "c.json")
        for a, b in zip(cams, back):
            assert np.array_equal(a.intrinsics, b.intrinsics)  # bit-exact via repr
            assert np.array_equal(a.cam_to_world, b.cam_to_world)
