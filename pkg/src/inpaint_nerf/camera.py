"""Pinhole camera geometry (OpenCV convention: x right, y down, z forward).

Poses are camera-to-world 4x4 rigid transforms. Pixel ``(row, col)`` has its
center at ``(col + 0.5, row + 0.5)`` in image coordinates. Depth maps hold
z-depth along the optical axis; 0 marks an invalid pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CameraError(ValueError):
    pass


ORTHO_TOL = 1e-6


def check_intrinsics(K: np.ndarray) -> np.ndarray:
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (3, 3):
        raise CameraError(f"intrinsics must be 3x3, got {K.shape}")
    if abs(np.linalg.det(K)) < 1e-12:
        raise CameraError("intrinsics matrix is singular")
    return K


def check_pose(pose: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise CameraError(f"pose must be 4x4, got {pose.shape}")
    R = pose[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1.0) > tol:
        raise CameraError(f"pose rotation is not orthonormal (det={np.linalg.det(R):.6f})")
    if not np.allclose(pose[3], [0, 0, 0, 1]):
        raise CameraError("pose bottom row must be [0, 0, 0, 1]")
    return pose


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world pose at ``eye`` whose +z axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        raise CameraError("look_at: view direction parallel to up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = right, down, forward, eye
    return pose


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = 0.0
    t_far: float = 1.0
    pixel: tuple[int, float, float] | None = None


def camera_directions(K: np.ndarray, rows, cols) -> np.ndarray:
    """Unnormalized camera-frame directions with unit z for the given pixels."""
    K = check_intrinsics(K)
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    pix = np.stack([cols + 0.5, rows + 0.5, np.ones_like(rows)], axis=-1)
    return pix @ np.linalg.inv(K).T


def generate_rays(K: np.ndarray, pose: np.ndarray, rows, cols) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World-space origins, unit directions, and z-per-unit-distance factors.

    The third output converts ray distance to z-depth: ``z = t * zscale``.
    """
    pose = check_pose(pose)
    d_cam = camera_directions(K, rows, cols)
    norm = np.linalg.norm(d_cam, axis=-1, keepdims=True)
    d_cam = d_cam / norm
    dirs = d_cam @ pose[:3, :3].T
    origins = np.broadcast_to(pose[:3, 3], dirs.shape).copy()
    return origins, dirs, d_cam[..., 2]


def generate_ray(K: np.ndarray, pose: np.ndarray, pixel, frame: int = 0) -> Ray:
    row, col = pixel
    o, d, _ = generate_rays(K, pose, np.array([row]), np.array([col]))
    return Ray(origin=o[0], direction=d[0], pixel=(frame, row, col))


def image_rays(K: np.ndarray, pose: np.ndarray, height: int, width: int):
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return generate_rays(K, pose, rows, cols)


def backproject(K: np.ndarray, pose: np.ndarray, depth: np.ndarray, stride: int = 1) -> np.ndarray:
    """World points for every valid (depth > 0) pixel, subsampled by ``stride``."""
    depth = np.asarray(depth, dtype=np.float64)
    rows, cols = np.meshgrid(
        np.arange(0, depth.shape[0], stride), np.arange(0, depth.shape[1], stride), indexing="ij"
    )
    z = depth[rows, cols]
    valid = z > 0
    d_cam = camera_directions(K, rows[valid], cols[valid])
    pts_cam = d_cam * z[valid][:, None]
    pose = check_pose(pose)
    return pts_cam @ pose[:3, :3].T + pose[:3, 3]


def project(K: np.ndarray, pose: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world points; returns (row, col, z) with continuous pixel coordinates.

    A point whose projection falls inside pixel (r, c) has ``floor(row) == r``.
    """
    K = check_intrinsics(K)
    pose = check_pose(pose)
    pts = (np.asarray(points, dtype=np.float64) - pose[:3, 3]) @ pose[:3, :3]
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uvw = pts @ K.T
        col = uvw[:, 0] / uvw[:, 2]
        row = uvw[:, 1] / uvw[:, 2]
    return row, col, z


def ray_aabb(origins: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Slab test. Returns (t_enter, t_exit); t_exit < t_enter means a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    t0 = np.nan_to_num(t0, nan=-np.inf)
    t1 = np.nan_to_num(t1, nan=np.inf)
    t_enter = np.minimum(t0, t1).max(axis=-1)
    t_exit = np.maximum(t0, t1).min(axis=-1)
    return t_enter, t_exit
