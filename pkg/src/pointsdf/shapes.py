"""Analytic shape primitives with exact signed distances and surface samplers.

Sign convention used throughout the package: negative inside, zero on the
surface, positive outside.  All distance evaluators are vectorized over an
``[N, 3]`` array of query points and are pure functions, so they can serve
as ground-truth oracles for training labels and for tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


def _as_points(x: Array) -> tuple[Array, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 0.5

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        d = np.linalg.norm(p - np.asarray(self.center), axis=1) - self.radius
        return d[0] if single else d

    def surface_area(self) -> float:
        return 4.0 * np.pi * self.radius**2

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * v

    @property
    def has_interior(self) -> bool:
        return True

    def bounds(self) -> tuple[Array, Array]:
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box:
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    half_extents: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        q = np.abs(p - np.asarray(self.center)) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        d = outside + inside
        return d[0] if single else d

    def surface_area(self) -> float:
        a, b, c = self.half_extents
        return 8.0 * (a * b + b * c + a * c)

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        h = np.asarray(self.half_extents)
        # pick one of the 6 faces proportionally to its area
        areas = np.array([h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * h
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(n), axis] = sign * h[axis]
        return pts + np.asarray(self.center)

    @property
    def has_interior(self) -> bool:
        return True

    def bounds(self) -> tuple[Array, Array]:
        c = np.asarray(self.center)
        h = np.asarray(self.half_extents)
        return c - h, c + h


@dataclass(frozen=True)
class Torus:
    """Torus around the +z axis through ``center``."""

    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    major_radius: float = 0.3
    minor_radius: float = 0.12

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        q = p - np.asarray(self.center)
        ring = np.hypot(q[:, 0], q[:, 1]) - self.major_radius
        d = np.hypot(ring, q[:, 2]) - self.minor_radius
        return d[0] if single else d

    def surface_area(self) -> float:
        return 4.0 * np.pi**2 * self.major_radius * self.minor_radius

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        R, r = self.major_radius, self.minor_radius
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            u = rng.uniform(0.0, 2.0 * np.pi, size=m)
            v = rng.uniform(0.0, 2.0 * np.pi, size=m)
            # area element is proportional to R + r*cos(v); reject accordingly
            keep = rng.uniform(0.0, R + r, size=m) < (R + r * np.cos(v))
            u, v = u[keep], v[keep]
            ring = R + r * np.cos(v)
            pts = np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=1)
            out = np.concatenate([out, pts])
        return out[:n] + np.asarray(self.center)

    @property
    def has_interior(self) -> bool:
        return True

    def bounds(self) -> tuple[Array, Array]:
        c = np.asarray(self.center)
        e = np.array([self.major_radius + self.minor_radius] * 2 + [self.minor_radius])
        return c - e, c + e


@dataclass(frozen=True)
class Capsule:
    point_a: tuple[float, float, float] = (-0.3, 0.0, 0.0)
    point_b: tuple[float, float, float] = (0.3, 0.0, 0.0)
    radius: float = 0.15

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        a = np.asarray(self.point_a)
        ab = np.asarray(self.point_b) - a
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        d = np.linalg.norm(p - a - t[:, None] * ab, axis=1) - self.radius
        return d[0] if single else d

    def surface_area(self) -> float:
        length = np.linalg.norm(np.asarray(self.point_b) - np.asarray(self.point_a))
        return 2.0 * np.pi * self.radius * length + 4.0 * np.pi * self.radius**2

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        a = np.asarray(self.point_a)
        b = np.asarray(self.point_b)
        ab = b - a
        length = np.linalg.norm(ab)
        axis = ab / length
        # orthonormal frame around the axis
        helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(axis, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(axis, e1)
        side_area = 2.0 * np.pi * self.radius * length
        cap_area = 4.0 * np.pi * self.radius**2
        on_side = rng.uniform(size=n) < side_area / (side_area + cap_area)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        rim = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
        t = rng.uniform(0.0, 1.0, size=n)
        side_pts = a + t[:, None] * ab + self.radius * rim
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        along = v @ axis
        cap_center = np.where(along[:, None] >= 0.0, b[None, :], a[None, :])
        cap_pts = cap_center + self.radius * v
        return np.where(on_side[:, None], side_pts, cap_pts)

    @property
    def has_interior(self) -> bool:
        return True

    def bounds(self) -> tuple[Array, Array]:
        lo = np.minimum(self.point_a, self.point_b) - self.radius
        hi = np.maximum(self.point_a, self.point_b) + self.radius
        return np.asarray(lo), np.asarray(hi)


@dataclass(frozen=True)
class Plane:
    """Halfspace boundary: sdf = dot(n, x) - offset, negative below the plane.

    Treated as having no interior for label balancing because its "inside"
    is an unbounded halfspace rather than a solid.
    """

    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(n)
        if not np.isclose(norm, 1.0, atol=1e-12):
            object.__setattr__(self, "normal", tuple(n / norm))

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        d = p @ np.asarray(self.normal) - self.offset
        return d[0] if single else d

    def surface_area(self) -> float:
        raise ValueError("plane is unbounded; pass patch bounds to sample_surface")

    def sample_surface(self, n: int, rng: np.random.Generator, patch_half: float = 1.0) -> Array:
        nrm = np.asarray(self.normal)
        helper = np.array([1.0, 0.0, 0.0]) if abs(nrm[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(nrm, helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(nrm, e1)
        uv = rng.uniform(-patch_half, patch_half, size=(n, 2))
        return self.offset * nrm + uv[:, :1] * e1 + uv[:, 1:] * e2

    @property
    def has_interior(self) -> bool:
        return False

    def bounds(self) -> tuple[Array, Array]:
        big = 1e9
        return np.full(3, -big), np.full(3, big)


@dataclass(frozen=True)
class ShapeUnion:
    """Union of shapes via pointwise min of child distances.

    Exact outside the union; inside overlapping interiors the magnitude is a
    lower bound on the distance to the union boundary (sign is always right),
    which is sufficient for sphere tracing and inside tests.
    """

    shapes: tuple = field(default_factory=tuple)

    def sdf(self, x: Array) -> Array:
        p, single = _as_points(x)
        d = np.min(np.stack([s.sdf(p) for s in self.shapes], axis=0), axis=0)
        return d[0] if single else d

    def surface_area(self) -> float:
        return sum(s.surface_area() for s in self.shapes)

    def sample_surface(self, n: int, rng: np.random.Generator) -> Array:
        areas = np.array([s.surface_area() for s in self.shapes])
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            pick = rng.choice(len(self.shapes), size=m, p=areas / areas.sum())
            pts = np.concatenate(
                [self.shapes[i].sample_surface(int((pick == i).sum()), rng) for i in range(len(self.shapes))]
            )
            # keep only points that are on the union boundary, not buried in a sibling
            keep = self.sdf(pts) > -1e-9
            out = np.concatenate([out, pts[keep]])
        return out[:n]

    @property
    def has_interior(self) -> bool:
        return any(s.has_interior for s in self.shapes)

    def bounds(self) -> tuple[Array, Array]:
        los, his = zip(*[s.bounds() for s in self.shapes])
        return np.min(los, axis=0), np.max(his, axis=0)


def analytic_sdf(shape, x: Array) -> Array:
    """Exact signed distance of an analytic shape (not meshes)."""
    return shape.sdf(x)


def prior_shape_catalog() -> dict[str, object]:
    """Named analytic shapes used as the default local-prior training set.

    All fit inside the unit cube [-0.5, 0.5]^3, matching the normalization
    the prior-training data pipeline expects.
    """
    return {
        "sphere_large": Sphere(radius=0.42),
        "sphere_medium": Sphere(radius=0.30),
        "sphere_small": Sphere(radius=0.22),
        "box_flat": Box(half_extents=(0.42, 0.42, 0.08)),
        "box_tall": Box(half_extents=(0.18, 0.24, 0.44)),
        "box_cube": Box(half_extents=(0.30, 0.30, 0.30)),
        "torus_wide": Torus(major_radius=0.32, minor_radius=0.10),
        "torus_fat": Torus(major_radius=0.24, minor_radius=0.14),
        "capsule_x": Capsule(point_a=(-0.32, 0.0, 0.0), point_b=(0.32, 0.0, 0.0), radius=0.14),
        "capsule_z": Capsule(point_a=(0.0, 0.0, -0.34), point_b=(0.0, 0.0, 0.34), radius=0.10),
    }


def heldout_shape() -> object:
    """Shape kept out of the default prior set, used for generalization checks."""
    return Torus(major_radius=0.28, minor_radius=0.12)
