"""Triangle meshes: IO (ASCII OBJ, binary little-endian PLY), watertightness,
winding-number signed distances, and procedural generators used by tests
and by the prior-training data pipeline."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from pointsdf import _kernels

Array = np.ndarray


class MeshError(ValueError):
    pass


@dataclass
class TriMesh:
    vertices: Array  # [V, 3] float64
    faces: Array  # [F, 3] int64
    vertex_colors: Array | None = None  # [V, 3] in [0, 1]

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise MeshError("face index out of range")

    # -- queries ---------------------------------------------------------

    def is_watertight(self) -> bool:
        """Closed orientable surface: every directed edge appears exactly once
        and every undirected edge exactly twice."""
        if len(self.faces) == 0:
            return False
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        keys = directed[:, 0] * len(self.vertices) + directed[:, 1]
        if len(np.unique(keys)) != len(keys):
            return False
        lo = directed.min(axis=1) * len(self.vertices) + directed.max(axis=1)
        _, counts = np.unique(lo, return_counts=True)
        return bool(np.all(counts == 2))

    def winding_number(self, x: Array) -> Array:
        p, single = _pts(x)
        w = _kernels.winding_number(self.vertices, self.faces, np.ascontiguousarray(p))
        return w[0] if single else w

    def unsigned_distance(self, x: Array) -> Array:
        p, single = _pts(x)
        d = _kernels.mesh_distance(self.vertices, self.faces, np.ascontiguousarray(p))
        return d[0] if single else d

    def sdf(self, x: Array) -> Array:
        """Signed distance: unsigned distance with winding-number sign
        (inside -> negative).  Requires a watertight mesh."""
        p, single = _pts(x)
        d = _kernels.mesh_distance(self.vertices, self.faces, np.ascontiguousarray(p))
        w = _kernels.winding_number(self.vertices, self.faces, np.ascontiguousarray(p))
        d = np.where(w > 0.5, -d, d)
        return d[0] if single else d

    def intersect_rays(self, origins: Array, dirs: Array) -> tuple[Array, Array]:
        return _kernels.ray_mesh(
            self.vertices, self.faces, np.ascontiguousarray(origins, dtype=np.float64),
            np.ascontiguousarray(dirs, dtype=np.float64),
        )

    def face_areas(self) -> Array:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def surface_area(self) -> float:
        return float(self.face_areas().sum())

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        areas = self.face_areas()
        fi = rng.choice(len(self.faces), size=n, p=areas / areas.sum())
        u = rng.uniform(size=(n, 1))
        v = rng.uniform(size=(n, 1))
        flip = (u + v) > 1.0
        u = np.where(flip, 1.0 - u, u)
        v = np.where(flip, 1.0 - v, v)
        a = self.vertices[self.faces[fi, 0]]
        b = self.vertices[self.faces[fi, 1]]
        c = self.vertices[self.faces[fi, 2]]
        return a + u * (b - a) + v * (c - a)

    def bounds(self) -> tuple[Array, Array]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def normalized_to_unit_cube(self) -> "TriMesh":
        """Center the bounding box at the origin and scale the longest side to 1."""
        lo, hi = self.bounds()
        center = 0.5 * (lo + hi)
        scale = float((hi - lo).max())
        if scale == 0.0:
            raise MeshError("degenerate mesh")
        return TriMesh((self.vertices - center) / scale, self.faces.copy(), self.vertex_colors)

def _pts(x: Array) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


class MeshShape:
    """Adapter giving a watertight mesh the same oracle interface as the
    analytic shapes (sdf / sample_surface / bounds)."""

    def __init__(self, mesh: TriMesh, require_watertight: bool = True):
        if require_watertight and not mesh.is_watertight():
            raise MeshError("mesh is not watertight; signed distances undefined")
        self.mesh = mesh

    def sdf(self, x: Array) -> Array:
        return self.mesh.sdf(x)

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        return self.mesh.sample_surface(n, rng)

    def surface_area(self) -> float:
        return self.mesh.surface_area()

    @property
    def has_interior(self) -> bool:
        return True

    def bounds(self) -> tuple[Array, Array]:
        return self.mesh.bounds()


# -- OBJ ------------------------------------------------------------------


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_obj(path) -> TriMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for i in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[i], idx[i + 1]])
    if not verts:
        raise MeshError(f"no vertices in OBJ file {path}")
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


# -- binary little-endian PLY ----------------------------------------------


def save_ply(path, mesh: TriMesh) -> None:
    ncol = mesh.vertex_colors is not None
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(mesh.vertices)}"]
    header += ["property float x", "property float y", "property float z"]
    if ncol:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if len(mesh.faces):
        header += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices"]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        v32 = mesh.vertices.astype("<f4")
        if ncol:
            rgb = np.clip(np.round(mesh.vertex_colors * 255.0), 0, 255).astype(np.uint8)
            for i in range(len(v32)):
                fh.write(v32[i].tobytes())
                fh.write(rgb[i].tobytes())
        else:
            fh.write(v32.tobytes())
        if len(mesh.faces):
            f32 = mesh.faces.astype("<i4")
            counts = np.full((len(f32), 1), 3, dtype=np.uint8)
            rec = np.empty(len(f32), dtype=[("n", "u1"), ("idx", "<i4", 3)])
            rec["n"] = counts[:, 0]
            rec["idx"] = f32
            fh.write(rec.tobytes())


def load_ply(path) -> TriMesh:
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshError(f"not a PLY file: {path}")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n") :]
    if "format binary_little_endian 1.0" not in header:
        raise MeshError("only binary little-endian PLY is supported")
    nvert = nface = 0
    vprops: list[str] = []
    element = None
    for line in header:
        parts = line.split()
        if parts[:1] == ["element"]:
            element = parts[1]
            if element == "vertex":
                nvert = int(parts[2])
            elif element == "face":
                nface = int(parts[2])
        elif parts[:1] == ["property"] and element == "vertex":
            vprops.append(parts[-1])
    has_color = "red" in vprops
    vert_fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if has_color:
        vert_fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vdt = np.dtype(vert_fields)
    vraw = np.frombuffer(body, dtype=vdt, count=nvert)
    verts = np.stack([vraw["x"], vraw["y"], vraw["z"]], axis=1).astype(np.float64)
    colors = None
    if has_color:
        colors = np.stack([vraw["red"], vraw["green"], vraw["blue"]], axis=1).astype(np.float64) / 255.0
    faces = np.zeros((0, 3), dtype=np.int64)
    if nface:
        fdt = np.dtype([("n", "u1"), ("idx", "<i4", 3)])
        fraw = np.frombuffer(body[nvert * vdt.itemsize :], dtype=fdt, count=nface)
        if not np.all(fraw["n"] == 3):
            raise MeshError("only triangle faces are supported")
        faces = fraw["idx"].astype(np.int64)
    return TriMesh(verts, faces, colors)


# -- generators -------------------------------------------------------------


def cube_mesh(half: float = 0.5, center=(0.0, 0.0, 0.0)) -> TriMesh:
    c = np.asarray(center, dtype=np.float64)
    corners = np.array(
        [[x, y, z] for x in (-half, half) for y in (-half, half) for z in (-half, half)]
    ) + c
    # 12 triangles, outward orientation
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, cc, d in quads:
        faces += [[a, b, cc], [a, cc, d]]
    return TriMesh(corners, np.array(faces, dtype=np.int64))


def icosphere(radius: float = 0.5, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriMesh(verts * radius + np.asarray(center), faces)
