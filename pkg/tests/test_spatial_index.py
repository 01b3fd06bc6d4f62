"""Voxel-grid build/query contracts and the brute-force equivalence."""

import numpy as np
import pytest

from pointsdf import _kernels
from pointsdf.spatial_index import VoxelGrid, VoxelGridConfig, VoxelGridError, brute_force_query

CFG = VoxelGridConfig()


class TestBuild:
    def test_empty_input(self):
        g = VoxelGrid.build(np.zeros((0, 3)), CFG)
        assert g.occupied_voxels == 0
        assert g.query(np.zeros(3), 4) == []

    def test_capacity_drops_overflow(self):
        pts = np.tile([[0.1, 0.1, 0.1]], (27, 1))
        g = VoxelGrid.build(pts, CFG)
        assert g.occupied_voxels == 1
        assert g.stored_count == 26
        # earliest insertions are kept
        assert set(g.stored_indices()) == set(range(26))

    def test_two_cells(self):
        eff = CFG.effective_voxel[0]
        pts = np.array([[0.0, 0.0, 0.0], [eff * 1.5, 0.0, 0.0]])
        g = VoxelGrid.build(pts + 0.01, CFG)
        assert g.occupied_voxels == 2

    def test_out_of_range_warning(self):
        pts = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
        with pytest.warns(UserWarning, match="outside"):
            g = VoxelGrid.build(pts, CFG)
        assert g.stored_count == 1

    def test_occupied_voxel_limit(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, (300, 3))
        cfg = VoxelGridConfig(max_occupied_voxels=10)
        with pytest.raises(VoxelGridError, match="occupied"):
            VoxelGrid.build(pts, cfg)

    def test_determinism(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-1, 1, (500, 3))
        a = VoxelGrid.build(pts, CFG)
        b = VoxelGrid.build(pts, CFG)
        assert np.array_equal(a.stored_indices(), b.stored_indices())

    def test_config_validation(self):
        with pytest.raises(VoxelGridError):
            VoxelGridConfig(kernel_size=(2, 3, 3))
        with pytest.raises(VoxelGridError):
            VoxelGridConfig(voxel_size=(0.0, 0.1, 0.1))
        with pytest.raises(VoxelGridError):
            VoxelGridConfig(max_points_per_voxel=0)


class TestQuery:
    def test_single_point(self):
        g = VoxelGrid.build(np.array([[0.2, 0.2, 0.2]]), CFG)
        assert g.query(np.array([0.21, 0.2, 0.2]), 8) == [0]

    def test_fewer_than_k(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.01, 0.0, 0.0], [0.0, 0.02, 0.0]])
        g = VoxelGrid.build(pts, CFG)
        out = g.query(np.zeros(3), 8)
        assert out == [0, 1, 2]  # all three, sorted by distance

    def test_outside_ranges_empty(self):
        g = VoxelGrid.build(np.array([[0.0, 0.0, 0.0]]), CFG)
        assert g.query(np.array([2.0, 0.0, 0.0]), 4) == []

    def test_k_validation(self):
        g = VoxelGrid.build(np.array([[0.0, 0.0, 0.0]]), CFG)
        with pytest.raises(VoxelGridError):
            g.query(np.zeros(3), 0)

    def test_radius_filter(self):
        pts = np.array([[0.0, 0.0, 0.0], [0.06, 0.0, 0.0]])
        g = VoxelGrid.build(pts, CFG)
        assert g.query(np.zeros(3), 8, radius=0.05) == [0]

    def test_tie_break_by_index(self):
        pts = np.array([[0.03, 0.0, 0.0], [-0.03, 0.0, 0.0]])
        g = VoxelGrid.build(pts + 1e-9, CFG)  # nudge off the voxel boundary
        out = g.query(np.array([1e-9, 0.0, 0.0]), 1)
        assert out == [0]

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-1, 1, (1000, 3))
        g = VoxelGrid.build(pts, CFG)
        queries = rng.uniform(-1.05, 1.05, (100, 3))
        got = g.query_batch(queries, 8, radius=0.075)
        stored = g.stored_indices()
        for i, q in enumerate(queries):
            ref = brute_force_query(g.points, CFG, stored, q, 8, 0.075)
            assert [int(v) for v in got[i] if v >= 0] == ref

    def test_never_returns_outside_window(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(-1, 1, (800, 3))
        g = VoxelGrid.build(pts, CFG)
        queries = rng.uniform(-1, 1, (50, 3))
        got = g.query_batch(queries, 8)
        eff = CFG.effective_voxel
        for i, q in enumerate(queries):
            qc = np.minimum(np.floor((q - CFG.origin) / eff).astype(int), CFG.dims - 1)
            for v in got[i]:
                if v < 0:
                    continue
                pc = np.minimum(np.floor((pts[v] - CFG.origin) / eff).astype(int), CFG.dims - 1)
                assert np.all(np.abs(pc - qc) <= 1)


@pytest.mark.skipif(not _kernels.HAVE_NATIVE, reason="compiled kernels not built")
class TestBackendEquivalence:
    def test_query_identical(self):
        nat = _kernels.get_backend("native")
        fall = _kernels.get_backend("numpy")
        rng = np.random.default_rng(3)
        pts = rng.uniform(-1, 1, (1200, 3))
        g = VoxelGrid.build(pts, CFG)
        q = rng.uniform(-1.1, 1.1, (300, 3))
        args = (
            g.points, g._pt_sorted, g._cell_keys, g._cell_starts,
            CFG.origin, CFG.effective_voxel, CFG.dims,
            np.asarray(CFG.kernel_size, dtype=np.int64) // 2, q, 8, 0.075**2,
        )
        assert np.array_equal(nat.voxel_query(*args), fall.voxel_query(*args))

    def test_mesh_kernels_agree(self):
        from pointsdf.mesh import icosphere

        nat = _kernels.get_backend("native")
        fall = _kernels.get_backend("numpy")
        ico = icosphere(0.5, 2)
        rng = np.random.default_rng(4)
        q = rng.uniform(-0.8, 0.8, (50, 3))
        assert np.allclose(
            nat.mesh_distance(ico.vertices, ico.faces, q),
            fall.mesh_distance(ico.vertices, ico.faces, q),
            atol=1e-12,
        )
        assert np.allclose(
            nat.winding_number(ico.vertices, ico.faces, q),
            fall.winding_number(ico.vertices, ico.faces, q),
            atol=1e-12,
        )
        o = np.tile([[0.0, 0.0, -2.0]], (30, 1))
        d = rng.normal(size=(30, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        t1, f1 = nat.ray_mesh(ico.vertices, ico.faces, o, d)
        t2, f2 = fall.ray_mesh(ico.vertices, ico.faces, o, d)
        assert np.array_equal(f1, f2)
        finite = np.isfinite(t1)
        assert np.allclose(t1[finite], t2[finite], atol=1e-12)
