"""Pinhole cameras and rays.

Conventions (fixed, documented here once): right-handed frames, camera looks
down +z in its own frame, image origin at the top-left, +x right, +y down.
Integer pixel (u, v) is sampled through its center (u + 0.5, v + 0.5).
Continuous image coordinates used for projection/feature sampling live in
[0, width] x [0, height] under the same center convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Ray:
    origin: Array
    direction: Array  # unit norm

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> Array:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    intrinsics: Array  # [3, 3] pinhole matrix, pixels
    cam_to_world: Array  # [4, 4] rigid transform
    width: int
    height: int

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        pose = np.asarray(self.cam_to_world, dtype=np.float64)
        if k.shape != (3, 3) or pose.shape != (4, 4):
            raise ValueError("intrinsics must be 3x3 and pose 4x4")
        if abs(k[1, 0]) > 0 or abs(k[2, 0]) > 0 or abs(k[2, 1]) > 0 or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("intrinsics must be upper-triangular with positive focal lengths")
        r = pose[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
            raise ValueError("pose rotation block must be orthonormal")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "cam_to_world", pose)

    @property
    def position(self) -> Array:
        return self.cam_to_world[:3, 3]

    @property
    def rotation(self) -> Array:
        return self.cam_to_world[:3, :3]

    def pixel_rays(self, us: Array, vs: Array) -> tuple[Array, Array]:
        """Rays through pixel centers for integer pixel index arrays."""
        us = np.asarray(us, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        if np.any(us < 0) or np.any(us >= self.width) or np.any(vs < 0) or np.any(vs >= self.height):
            raise ValueError("pixel coordinates out of bounds")
        k = self.intrinsics
        x = (us + 0.5 - k[0, 2]) / k[0, 0]
        y = (vs + 0.5 - k[1, 2]) / k[1, 1]
        d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        d = d_cam @ self.rotation.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        o = np.broadcast_to(self.position, d.shape).copy()
        return o, d

    def all_rays(self) -> tuple[Array, Array]:
        vs, us = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        o, d = self.pixel_rays(us.ravel(), vs.ravel())
        return o, d

    def project(self, points: Array) -> tuple[Array, Array, Array]:
        """World points -> continuous image coordinates.

        Returns (uv [N, 2], depth [N], valid [N]); valid means in front of the
        camera and with full bilinear support inside the image.
        """
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        pc = (p - self.position) @ self.rotation  # world->camera: R^T (p - C)
        z = pc[:, 2]
        k = self.intrinsics
        with np.errstate(divide="ignore", invalid="ignore"):
            u = k[0, 0] * pc[:, 0] / z + k[0, 2]
            v = k[1, 1] * pc[:, 1] / z + k[1, 2]
        uv = np.stack([u, v], axis=1)
        valid = (z > 1e-9) & (u >= 0.5) & (u <= self.width - 0.5) & (v >= 0.5) & (v <= self.height - 0.5)
        if single:
            return uv[0], z[0], valid[0]
        return uv, z, valid

    def project_gradient(self, points: Array) -> Array:
        """Jacobian d(uv)/d(world point), shape [N, 2, 3]."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        pc = (p - self.position) @ self.rotation
        k = self.intrinsics
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        du_dpc = np.stack([k[0, 0] / z, np.zeros_like(z), -k[0, 0] * x / z**2], axis=1)
        dv_dpc = np.stack([np.zeros_like(z), k[1, 1] / z, -k[1, 1] * y / z**2], axis=1)
        j_pc = np.stack([du_dpc, dv_dpc], axis=1)  # [N, 2, 3]
        return j_pc @ self.rotation.T  # d(pc)/d(p) = R^T


def generate_ray(cam: Camera, u: int, v: int) -> Ray:
    """Ray through the center of pixel (u, v)."""
    o, d = cam.pixel_rays(np.array([u]), np.array([v]))
    return Ray(o[0], d[0])


def look_at_camera(
    position,
    target,
    width: int,
    height: int,
    fov_deg: float = 45.0,
    up=(0.0, 0.0, 1.0),
) -> Camera:
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(right)
    if n < 1e-9:  # looking along 'up': pick an arbitrary perpendicular
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        n = np.linalg.norm(right)
    right /= n
    down = np.cross(forward, right)  # +y is down in the image
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = position
    focal = 0.5 * width / np.tan(0.5 * np.deg2rad(fov_deg))
    k = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(k, pose, width, height)


def ring_cameras(
    n_views: int,
    radius: float,
    elevation_deg: float,
    target=(0.0, 0.0, 0.0),
    width: int = 96,
    height: int = 96,
    fov_deg: float = 45.0,
    azimuth_offset_deg: float = 0.0,
) -> list[Camera]:
    """Cameras on a ring around +z, all looking at the target."""
    target = np.asarray(target, dtype=np.float64)
    cams = []
    elev = np.deg2rad(elevation_deg)
    for i in range(n_views):
        az = np.deg2rad(azimuth_offset_deg + 360.0 * i / n_views)
        pos = target + radius * np.array(
            [np.cos(az) * np.cos(elev), np.sin(az) * np.cos(elev), np.sin(elev)]
        )
        cams.append(look_at_camera(pos, target, width, height, fov_deg))
    return cams


# -- JSON persistence (repr-exact floats, lossless roundtrip) ---------------


def save_cameras(path, cameras: list[Camera]) -> None:
    views = [
        {
            "width": c.width,
            "height": c.height,
            "intrinsics": c.intrinsics.tolist(),
            "cam_to_world": c.cam_to_world.tolist(),
        }
        for c in cameras
    ]
    with open(path, "w") as fh:
        json.dump({"views": views}, fh, indent=1)


def load_cameras(path) -> list[Camera]:
    with open(path) as fh:
        data = json.load(fh)
    return [
        Camera(
            np.array(v["intrinsics"], dtype=np.float64),
            np.array(v["cam_to_world"], dtype=np.float64),
            int(v["width"]),
            int(v["height"]),
        )
        for v in data["views"]
    ]
