"""Analytic test scenes: a textured box-shaped room with a box object on the floor.

Every frame is ray traced in closed form (ray/plane against the room walls,
ray/box against the object), so depth is exact and the object silhouette is
known per pixel. Each scene comes as a pair of sequences that share poses:
with the object (training input) and without it (evaluation reference).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import generate_rays, look_at
from .inpaint import inpaint_builtin, inpaint_frame
from .scene import BBox3, Frame, SceneDataset, every_nth_split


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    height: int = 48
    width: int = 64
    n_frames: int = 30
    focal: float = 60.0
    room_lo: tuple[float, float, float] = (-2.0, -2.0, 0.0)
    room_hi: tuple[float, float, float] = (2.0, 2.0, 2.5)
    with_object: bool = True
    object_center: tuple[float, float, float] = (0.0, 0.0, 0.3)
    object_half_extents: tuple[float, float, float] = (0.35, 0.25, 0.3)
    object_yaw_deg: float = 25.0
    orbit_radius: float = 1.45
    orbit_height: float = 1.15
    orbit_target: tuple[float, float, float] = (0.0, 0.0, 0.25)
    orbit_phase_deg: float = 0.0
    # lateral / top growth of the annotated box; its bottom stays just above the floor
    box_margin: float = 0.05
    test_every: int = 8
    inpaint: bool = True
    corrupt_fraction: float = 0.0
    corrupt_color: tuple[float, float, float] = (1.0, 0.0, 1.0)
    corrupt_depth_bias: float = 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        for k, v in known.items():
            if isinstance(v, list):
                known[k] = tuple(v)
        return cls(**known)


@dataclass
class SyntheticTruth:
    """What the generator knows exactly and a real capture would not."""

    object_free_rgb: list[np.ndarray] = field(default_factory=list)
    object_free_depth: list[np.ndarray] = field(default_factory=list)
    silhouettes: list[np.ndarray] = field(default_factory=list)
    corrupted: list[int] = field(default_factory=list)
    object_box: BBox3 | None = None


def _yaw(deg: float) -> np.ndarray:
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a), 0.0], [np.sin(a), np.cos(a), 0.0], [0.0, 0.0, 1.0]])


def object_box(spec: SyntheticSpec) -> BBox3:
    return BBox3(spec.object_center, spec.object_half_extents, _yaw(spec.object_yaw_deg))


def annotation_box(spec: SyntheticSpec) -> BBox3:
    obj = object_box(spec)
    m = spec.box_margin
    lo_z = obj.center[2] - obj.half_extents[2] + 0.02
    hi_z = obj.center[2] + obj.half_extents[2] + m
    center = np.array([obj.center[0], obj.center[1], 0.5 * (lo_z + hi_z)])
    half = np.array([obj.half_extents[0] + m, obj.half_extents[1] + m, 0.5 * (hi_z - lo_z)])
    return BBox3(center, half, obj.rotation)


def intrinsics(spec: SyntheticSpec) -> np.ndarray:
    return np.array([[spec.focal, 0.0, spec.width / 2.0], [0.0, spec.focal, spec.height / 2.0], [0.0, 0.0, 1.0]])


def orbit_poses(spec: SyntheticSpec) -> list[np.ndarray]:
    poses = []
    for n in range(spec.n_frames):
        a = np.deg2rad(spec.orbit_phase_deg) + 2.0 * np.pi * n / spec.n_frames
        eye = (spec.orbit_radius * np.cos(a), spec.orbit_radius * np.sin(a), spec.orbit_height)
        poses.append(look_at(eye, spec.orbit_target))
    return poses


# ------------------------------------------------------------------ textures

_FLOOR = np.array([0.55, 0.47, 0.38])
_WALLS = {
    0: np.array([0.62, 0.58, 0.50]),  # x = lo
    1: np.array([0.48, 0.56, 0.60]),  # x = hi
    2: np.array([0.58, 0.52, 0.60]),  # y = lo
    3: np.array([0.52, 0.60, 0.50]),  # y = hi
}
_CEILING = np.array([0.80, 0.80, 0.78])
_OBJECT = np.array([0.20, 0.32, 0.78])


def _room_color(face: np.ndarray, p: np.ndarray) -> np.ndarray:
    x, y, z = p[:, 0:1], p[:, 1:2], p[:, 2:3]
    col = np.zeros_like(p)
    floor = face == 4
    col[floor] = (
        _FLOOR
        + 0.12 * np.sin(2 * np.pi * x / 1.7 + 0.3) * np.array([1.0, 0.9, 0.7])
        + 0.08 * np.cos(2 * np.pi * y / 1.3) * np.array([0.6, 0.8, 1.0])
    )[floor]
    for f, base in _WALLS.items():
        sel = face == f
        u = y if f < 2 else x
        col[sel] = (base + 0.10 * np.sin(2 * np.pi * u / 1.5 + f) + 0.06 * np.cos(2 * np.pi * z / 1.2) * np.array([1.0, 0.7, 0.4]))[sel]
    ceil = face == 5
    col[ceil] = np.broadcast_to(_CEILING, p.shape)[ceil]
    return np.clip(col, 0.0, 1.0)


def _object_color(axis: np.ndarray, local: np.ndarray, half: np.ndarray) -> np.ndarray:
    shade = np.array([0.85, 0.70, 1.00])[axis][:, None]
    stripe = 0.06 * np.sin(2 * np.pi * local[:, 2:3] / (2 * half[2]))
    return np.clip(_OBJECT * shade + stripe, 0.0, 1.0)


def trace(spec: SyntheticSpec, origins: np.ndarray, dirs: np.ndarray, with_object: bool):
    """Closed-form hit distance, color, and object-hit flag for each ray."""
    lo, hi = np.asarray(spec.room_lo), np.asarray(spec.room_hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_lo = (lo - origins) / dirs
        t_hi = (hi - origins) / dirs
    t_planes = np.concatenate([t_lo, t_hi], axis=1)  # x_lo y_lo z_lo x_hi y_hi z_hi
    t_planes = np.where(np.isfinite(t_planes) & (t_planes > 0), t_planes, np.inf)
    which = np.argmin(t_planes, axis=1)
    t = t_planes[np.arange(len(which)), which]
    # map plane slot -> face id (0..3 walls, 4 floor, 5 ceiling)
    face = np.array([0, 2, 4, 1, 3, 5])[which]
    hit = origins + dirs * t[:, None]
    rgb = _room_color(face, hit)
    on_object = np.zeros(len(t), dtype=bool)
    if with_object:
        box = object_box(spec)
        ol = box.local(origins)
        dl = dirs @ box.rotation
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (-box.half_extents - ol) / dl
            b = (box.half_extents - ol) / dl
        a = np.nan_to_num(a, nan=-np.inf)
        b = np.nan_to_num(b, nan=np.inf)
        near = np.minimum(a, b)
        enter = near.max(axis=1)
        exit_ = np.maximum(a, b).min(axis=1)
        on_object = (enter <= exit_) & (enter > 0) & (enter < t)
        if on_object.any():
            t = np.where(on_object, enter, t)
            axis = np.argmax(near, axis=1)
            local = ol + dl * enter[:, None]
            rgb[on_object] = _object_color(axis[on_object], local[on_object], box.half_extents)
    return t, rgb, on_object


def render_view(spec: SyntheticSpec, pose: np.ndarray, with_object: bool | None = None):
    """(rgb (H, W, 3), z-depth (H, W), object silhouette (H, W)) for one pose."""
    with_object = spec.with_object if with_object is None else with_object
    h, w = spec.height, spec.width
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    o, d, zscale = generate_rays(intrinsics(spec), pose, rows.reshape(-1), cols.reshape(-1))
    t, rgb, on_obj = trace(spec, o, d, with_object)
    return rgb.reshape(h, w, 3), (t * zscale).reshape(h, w), on_obj.reshape(h, w)


def _check(spec: SyntheticSpec, poses: list[np.ndarray]) -> None:
    if spec.n_frames < 1 or spec.height < 1 or spec.width < 1:
        raise SyntheticSpecError("need at least one frame and a positive resolution")
    lo, hi = np.asarray(spec.room_lo), np.asarray(spec.room_hi)
    box = object_box(spec)
    for i, pose in enumerate(poses):
        eye = pose[:3, 3]
        if np.any(eye <= lo) or np.any(eye >= hi):
            raise SyntheticSpecError(f"camera {i} at {eye.tolist()} is outside the room")
        if box.contains(eye[None])[0]:
            raise SyntheticSpecError(f"camera {i} at {eye.tolist()} is inside the object")
    if not 0.0 <= spec.corrupt_fraction <= 1.0:
        raise SyntheticSpecError("corrupt_fraction must lie in [0, 1]")


def corrupted_frames(spec: SyntheticSpec, seed: int, candidates: list[int]) -> list[int]:
    """round(fraction * n_frames) distinct frames drawn from ``candidates``."""
    count = min(int(round(spec.corrupt_fraction * spec.n_frames)), len(candidates))
    if count == 0:
        return []
    rng = np.random.default_rng([seed, 0xC0FFEE])
    return sorted(int(i) for i in rng.choice(candidates, size=count, replace=False))


def make_synthetic(spec: SyntheticSpec | None = None, seed: int = 0) -> tuple[SceneDataset, SyntheticTruth]:
    """Render a paired synthetic scene; optionally inpaint and corrupt inpaintings."""
    spec = spec or SyntheticSpec()
    poses = orbit_poses(spec)
    _check(spec, poses)
    K = intrinsics(spec)
    truth = SyntheticTruth(object_box=object_box(spec))
    frames = []
    for i, pose in enumerate(poses):
        rgb, depth, sil = render_view(spec, pose, with_object=spec.with_object)
        rgb0, depth0, _ = render_view(spec, pose, with_object=False)
        truth.object_free_rgb.append(rgb0)
        truth.object_free_depth.append(depth0)
        truth.silhouettes.append(sil)
        frames.append(Frame(i, rgb, depth, pose, sil.copy(), gt_rgb=rgb0, gt_depth=depth0))
    split = every_nth_split(spec.n_frames, spec.test_every)
    ds = SceneDataset(frames, K, annotation_box(spec) if spec.with_object else None, split)

    if spec.inpaint:
        for f in frames:
            f.inpaint_rgb, f.inpaint_depth = inpaint_frame(f, inpaint_builtin)
        truth.corrupted = corrupted_frames(spec, seed, split["train"])
        for i in truth.corrupted:
            f = frames[i]
            f.inpaint_rgb = np.where(f.mask[..., None], np.asarray(spec.corrupt_color), f.inpaint_rgb)
            f.inpaint_depth = np.where(f.mask, f.inpaint_depth + spec.corrupt_depth_bias, f.inpaint_depth)
    spec_dict = asdict(spec)
    ds.meta = {"synthetic": spec_dict, "seed": seed, "corrupted": truth.corrupted}
    ds.validate()
    return ds, truth
