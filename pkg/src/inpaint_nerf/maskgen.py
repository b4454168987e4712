"""Object masks from one annotated 3D box.

Pipeline per scene: back-project every depth map into a shared world point
cloud, keep the points inside the box, splat them into each frame with a
depth-buffer visibility check, and close small gaps morphologically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import ndimage

from .camera import backproject, generate_rays, project
from .scene import BBox3, SceneDataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskParams:
    depth_tolerance: float = 0.05
    dilate_radius: int = 2
    erode_radius: int = 2
    stride: int = 1
    # "consistent": |point depth - sensor depth| <= tol
    # "front": point depth <= sensor depth + tol
    visibility: Literal["consistent", "front"] = "consistent"


def backproject_cloud(ds: SceneDataset, stride: int = 1, frames=None) -> np.ndarray:
    idx = range(len(ds)) if frames is None else frames
    clouds = [backproject(ds.intrinsics, ds.frames[i].pose, ds.frames[i].depth, stride) for i in idx]
    return np.concatenate(clouds, axis=0) if clouds else np.zeros((0, 3))


def box_filter(cloud: np.ndarray, box: BBox3) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    return cloud[box.contains(cloud)]


def project_mask(K: np.ndarray, pose: np.ndarray, depth: np.ndarray, points: np.ndarray,
                 depth_tolerance: float = 0.05, visibility: str = "consistent") -> np.ndarray:
    """Set every pixel hit by a visible object point.

    Pixels with no valid sensor depth accept any point in front of the camera.
    """
    if depth_tolerance <= 0:
        raise ValueError("depth_tolerance must be positive")
    h, w = depth.shape
    mask = np.zeros((h, w), dtype=bool)
    if len(points) == 0:
        return mask
    row, col, z = project(K, pose, points)
    ok = (z > 0) & np.isfinite(row) & np.isfinite(col)
    r = np.floor(np.where(ok, row, -1)).astype(np.int64)
    c = np.floor(np.where(ok, col, -1)).astype(np.int64)
    ok &= (r >= 0) & (r < h) & (c >= 0) & (c < w)
    r, c, z = r[ok], c[ok], z[ok]
    sensor = depth[r, c]
    if visibility == "consistent":
        visible = np.abs(z - sensor) <= depth_tolerance
    elif visibility == "front":
        visible = z <= sensor + depth_tolerance
    else:
        raise ValueError(f"unknown visibility rule {visibility!r}")
    visible |= sensor <= 0
    mask[r[visible], c[visible]] = True
    return mask


def refine_mask(raw: np.ndarray, dilate_r: int = 2, erode_r: int = 2) -> np.ndarray:
    """Closing with square structuring elements: dilate by dilate_r, then erode by erode_r."""
    if dilate_r < 0 or erode_r < 0:
        raise ValueError("radii must be non-negative")
    out = np.asarray(raw, dtype=bool)
    if dilate_r:
        out = ndimage.binary_dilation(out, structure=np.ones((2 * dilate_r + 1,) * 2, dtype=bool))
    if erode_r:
        # pixels beyond the border count as set so closing never eats into the image edge
        out = ndimage.binary_erosion(out, structure=np.ones((2 * erode_r + 1,) * 2, dtype=bool), border_value=1)
    return out


def box_silhouette(K: np.ndarray, pose: np.ndarray, shape: tuple[int, int], box: BBox3) -> np.ndarray:
    """Pixels whose center ray passes through the box (the raw, unrefined mask)."""
    h, w = shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    o, d, _ = generate_rays(K, pose, rows.reshape(-1), cols.reshape(-1))
    ol = box.local(o)
    dl = d @ box.rotation
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-box.half_extents - ol) / dl
        t1 = (box.half_extents - ol) / dl
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    enter = np.minimum(t0, t1).max(axis=1)
    exit_ = np.maximum(t0, t1).min(axis=1)
    return ((exit_ >= np.maximum(enter, 0.0)) & (exit_ > 0)).reshape(h, w)


def masks_from_box(ds: SceneDataset, box: BBox3 | None = None, params: MaskParams = MaskParams()) -> list[np.ndarray]:
    """Refined mask for every frame of ``ds``.

    Falls back to the raw box silhouettes when no scene point lies inside the box.
    """
    box = box if box is not None else ds.box
    if box is None:
        raise ValueError("no 3D box given and the dataset has none")
    obj = box_filter(backproject_cloud(ds, params.stride), box)
    if len(obj) == 0:
        log.warning("no scene points inside the box; using raw box silhouettes")
        return [box_silhouette(ds.intrinsics, f.pose, f.shape, box) for f in ds.frames]
    masks = []
    for f in ds.frames:
        raw = project_mask(ds.intrinsics, f.pose, f.depth, obj, params.depth_tolerance, params.visibility)
        masks.append(refine_mask(raw, params.dilate_radius, params.erode_radius))
    return masks
