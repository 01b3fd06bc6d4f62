"""Run configuration: one human-editable JSON file covering every phase,
with all defaults spelled out explicitly.

Every CLI run re-serializes the fully resolved configuration next to its
outputs so results are self-describing.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from pointsdf.field import FieldConfig
from pointsdf.meshing import ExtractionConfig
from pointsdf.renderer import RenderConfig
from pointsdf.spatial_index import VoxelGridConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PriorTrainConfig:
    shapes: tuple[str, ...] = (
        "sphere_large", "sphere_medium", "sphere_small",
        "box_flat", "box_tall", "box_cube",
        "torus_wide", "torus_fat", "capsule_x", "capsule_z",
    )
    epochs: int = 500
    batch_size: int = 5
    queries_per_instance: int = 1024
    query_pool_per_shape: int = 20000
    surface_samples_per_shape: int = 30000
    neural_points_per_instance: int = 2000
    point_spacing: float = 0.025
    jitter_variance: float = 0.005
    query_variances: tuple[float, float] = (0.05, 0.001)
    num_neighbors: int = 4
    eikonal_points_per_instance: int = 96
    lr_latent_start: float = 1e-2
    lr_latent_end: float = 3e-4
    lr_decoder: float = 3e-4
    lambda_tv: float = 1e-2
    lambda_eik: float = 1e-3
    sdf_eps: float = 0.01
    checkpoint_every: int = 200

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.queries_per_instance) < 0:
            raise ConfigError("counts must be non-negative")


@dataclass(frozen=True)
class ReconConfig:
    iterations: int = 20000
    rays_per_step: int = 512
    num_neighbors: int = 8
    lambda_fc: float = 0.5
    lambda_pseu: float = 0.5
    lambda_tv: float = 0.01
    sdf_eps: float = 0.01
    lr_latent_start: float = 2e-3
    lr_latent_end: float = 2e-4
    lr_appearance_start: float = 2e-3
    lr_appearance_end: float = 2e-4
    lr_density: float = 2e-3
    pseudo_points_per_step: int = 512
    freeze_geometry: bool = True
    use_prior: bool = True  # ablation switch: random frozen geometry decoders when off
    optimize_density: bool = True
    feature_extractor: str = "patch3_rgb"
    seed_point_spacing: float = 0.025
    unproject_stride: int = 2
    checkpoint_every: int = 500
    preview_every: int = 0

    def __post_init__(self):
        if self.iterations < 0 or self.rays_per_step < 1:
            raise ConfigError("need iterations >= 0 and rays_per_step >= 1")


@dataclass(frozen=True)
class ShapeSpec:
    kind: str = "sphere"
    params: dict = dataclasses.field(default_factory=dict)
    albedo: str = "checker"
    albedo_params: dict = dataclasses.field(default_factory=dict)


@dataclass(frozen=True)
class SceneConfig:
    name: str = "sphere_plane"
    objects: tuple[ShapeSpec, ...] = (
        ShapeSpec(
            kind="sphere",
            params={"center": [0.0, 0.0, -0.15], "radius": 0.35},
            albedo="checker",
            albedo_params={
                "color_a": [0.92, 0.35, 0.2], "color_b": [0.95, 0.85, 0.35],
                "cell": 0.18, "phase": [0.07, 0.03, 0.05],
            },
        ),
        ShapeSpec(
            kind="plane",
            params={"normal": [0.0, 0.0, 1.0], "offset": -0.5},
            albedo="checker",
            albedo_params={
                "color_a": [0.85, 0.85, 0.92], "color_b": [0.2, 0.25, 0.4],
                "cell": 0.25, "phase": [0.125, 0.125, 0.0],
            },
        ),
    )
    width: int = 96
    height: int = 96
    n_views: int = 3
    heldout_views: int = 1
    ring_radius: float = 1.8
    ring_elevation_deg: float = 38.0
    ring_target: tuple[float, float, float] = (0.0, 0.0, -0.2)
    fov_deg: float = 42.0
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounds: tuple[float, float, float, float, float, float] = (-1.0, -1.0, -1.0, 1.0, 1.0, 1.0)
    eval_bounds: tuple[float, float, float, float, float, float] = (-0.75, -0.75, -0.55, 0.75, 0.75, 0.35)
    gt_mesh_resolution: int = 160


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    field: FieldConfig = dataclasses.field(default_factory=FieldConfig)
    voxel_grid: VoxelGridConfig = dataclasses.field(default_factory=VoxelGridConfig)
    renderer: RenderConfig = dataclasses.field(default_factory=RenderConfig)
    prior: PriorTrainConfig = dataclasses.field(default_factory=PriorTrainConfig)
    recon: ReconConfig = dataclasses.field(default_factory=ReconConfig)
    extraction: ExtractionConfig = dataclasses.field(default_factory=ExtractionConfig)
    scene: SceneConfig = dataclasses.field(default_factory=SceneConfig)


# -- dict / JSON conversion with strict keys ------------------------------------


def _to_plain(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_to_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    return value


def config_to_dict(cfg) -> dict:
    return _to_plain(cfg)


def _from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in names.items():
        if name not in data:
            continue
        value = data[name]
        kwargs[name] = _coerce(f.type, value, f"{path}.{name}")
    return cls(**kwargs)


_NESTED = {
    "FieldConfig": FieldConfig,
    "VoxelGridConfig": VoxelGridConfig,
    "RenderConfig": RenderConfig,
    "PriorTrainConfig": PriorTrainConfig,
    "ReconConfig": ReconConfig,
    "ExtractionConfig": ExtractionConfig,
    "SceneConfig": SceneConfig,
    "ShapeSpec": ShapeSpec,
}


def _coerce(ftype, value, path: str):
    name = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    for key, cls in _NESTED.items():
        if key in name:
            if "tuple" in name.lower() and isinstance(value, list):
                return tuple(_from_dict(cls, v, f"{path}[{i}]") for i, v in enumerate(value))
            return _from_dict(cls, value, path)
    if isinstance(value, list):
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def run_config_from_dict(data: dict) -> RunConfig:
    return _from_dict(RunConfig, data, "config")


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return run_config_from_dict(data)


def save_run_config(path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def scene_from_config(scfg: SceneConfig):
    """Instantiate Scene + cameras (train and held-out) from the config."""
    from pointsdf.cameras import ring_cameras
    from pointsdf.scene import CheckerAlbedo, ConstantAlbedo, Scene, SceneObject
    from pointsdf.shapes import Box, Capsule, Plane, Sphere, Torus

    kinds = {"sphere": Sphere, "box": Box, "torus": Torus, "capsule": Capsule, "plane": Plane}
    objects = []
    for spec in scfg.objects:
        if spec.kind not in kinds:
            raise ConfigError(f"unknown shape kind {spec.kind!r}")
        params = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.params.items()}
        shape = kinds[spec.kind](**params)
        if spec.albedo == "checker":
            ap = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.albedo_params.items()}
            albedo = CheckerAlbedo(**ap)
        elif spec.albedo == "constant":
            ap = {k: tuple(v) if isinstance(v, list) else v for k, v in spec.albedo_params.items()}
            albedo = ConstantAlbedo(**ap)
        else:
            raise ConfigError(f"unknown albedo {spec.albedo!r}")
        objects.append(SceneObject(shape, albedo))
    scene = Scene(
        tuple(objects),
        background=tuple(scfg.background),
        render_bounds=(tuple(scfg.bounds[:3]), tuple(scfg.bounds[3:])),
    )
    train = ring_cameras(
        scfg.n_views, scfg.ring_radius, scfg.ring_elevation_deg, scfg.ring_target,
        scfg.width, scfg.height, scfg.fov_deg,
    )
    # held-out views sit halfway between training views on the same ring
    heldout = ring_cameras(
        scfg.heldout_views, scfg.ring_radius, scfg.ring_elevation_deg, scfg.ring_target,
        scfg.width, scfg.height, scfg.fov_deg,
        azimuth_offset_deg=180.0 / max(scfg.n_views, 1),
    ) if scfg.heldout_views else []
    return scene, train, heldout
