import logging

import numpy as np
import pytest
from scipy import ndimage

from inpaint_nerf.camera import backproject, look_at, project
from inpaint_nerf.maskgen import (
    MaskParams,
    backproject_cloud,
    box_filter,
    box_silhouette,
    masks_from_box,
    project_mask,
    refine_mask,
)
from inpaint_nerf.scene import BBox3, SceneDataset

# principal point on the center of pixel (49, 49)
K = np.array([[100.0, 0, 49.5], [0, 100.0, 49.5], [0, 0, 1]])


def test_backproject_examples():
    depth = np.zeros((100, 100))
    depth[49, 49] = 2.0
    pts = backproject(K, np.eye(4), depth)
    np.testing.assert_allclose(pts, [[0.0, 0.0, 2.0]], atol=1e-15)
    depth[10, 10] = 1.0
    pose = np.eye(4)
    pose[:3, 3] = [1.0, -2.0, 0.5]
    np.testing.assert_allclose(backproject(K, pose, depth), backproject(K, np.eye(4), depth) + pose[:3, 3])


def test_backproject_reprojects_to_source_pixel(rng):
    pose = look_at((1.0, 1.5, 1.2), (0.0, 0.0, 0.2))
    depth = rng.uniform(0.5, 4.0, (20, 30))
    pts = backproject(K, pose, depth)
    row, col, z = project(K, pose, pts)
    rows, cols = np.meshgrid(np.arange(20), np.arange(30), indexing="ij")
    assert np.array_equal(np.floor(row).astype(int), rows.reshape(-1))
    assert np.array_equal(np.floor(col).astype(int), cols.reshape(-1))
    assert np.max(np.abs(z - depth.reshape(-1))) < 1e-6


def test_box_filter_examples():
    box = BBox3((1.0, 2.0, 3.0), (0.5, 0.4, 0.3), np.eye(3))
    kept = box_filter(np.array([[1.0, 2.0, 3.0], [1.0 + 1.001 * 0.5, 2.0, 3.0]]), box)
    np.testing.assert_array_equal(kept, [[1.0, 2.0, 3.0]])
    a = np.deg2rad(30)
    R = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    rbox = BBox3((0.0, 0.0, 0.0), (0.5, 0.2, 0.1), R)
    face = R @ np.array([0.5, 0.0, 0.0])
    assert len(box_filter(face[None], rbox)) == 1
    assert len(box_filter((R @ np.array([0.5001, 0.0, 0.0]))[None], rbox)) == 0


def _pt_at(depth_value):
    """A point on the optical axis at camera depth ``depth_value``; it lands on pixel (49, 49)."""
    return np.array([[0.0, 0.0, depth_value]])


def test_project_mask_examples():
    frame_depth = np.full((100, 100), 2.01)
    assert project_mask(K, np.eye(4), frame_depth, _pt_at(2.0), 0.05)[49, 49]
    frame_depth[:] = 1.5
    assert not project_mask(K, np.eye(4), frame_depth, _pt_at(2.0), 0.05).any()
    far_off = np.array([[50.0, 0.0, 1.0]])
    assert not project_mask(K, np.eye(4), frame_depth, far_off, 0.05).any()
    behind = np.array([[0.0, 0.0, -1.0]])
    assert not project_mask(K, np.eye(4), frame_depth, behind, 0.05).any()
    with pytest.raises(ValueError):
        project_mask(K, np.eye(4), frame_depth, _pt_at(2.0), 0.0)


def test_front_rule_accepts_points_before_the_surface():
    frame_depth = np.full((100, 100), 3.0)
    assert not project_mask(K, np.eye(4), frame_depth, _pt_at(2.0), 0.05, "consistent").any()
    assert project_mask(K, np.eye(4), frame_depth, _pt_at(2.0), 0.05, "front")[49, 49]


def test_project_mask_order_invariant(rng):
    pose = look_at((1.5, 0.5, 1.0), (0, 0, 0))
    pts = rng.uniform(-0.3, 0.3, (500, 3))
    depth = rng.uniform(1.0, 2.5, (100, 100))
    a = project_mask(K, pose, depth, pts, 0.5)
    b = project_mask(K, pose, depth, pts[rng.permutation(500)], 0.5)
    assert np.array_equal(a, b)


def test_refine_examples():
    assert not refine_mask(np.zeros((9, 9), bool), 1, 1).any()
    one = np.zeros((9, 9), bool)
    one[4, 4] = True
    assert np.array_equal(refine_mask(one, 1, 1), one)
    blob = np.zeros((11, 11), bool)
    blob[3:8, 3:8] = True
    holed = blob.copy()
    holed[5, 5] = False
    assert np.array_equal(refine_mask(holed, 1, 1), blob)


def test_refine_is_closing_within_margin(rng):
    raw = rng.uniform(size=(30, 40)) < 0.05
    out = refine_mask(raw, 2, 2)
    assert np.all(out[raw])
    margin = ndimage.binary_dilation(raw, structure=np.ones((5, 5), bool))
    assert np.all(margin[out])
    with pytest.raises(ValueError):
        refine_mask(raw, -1, 1)


def test_masks_follow_silhouettes(small_scene):
    ds, truth = small_scene
    masks = masks_from_box(ds)
    for m, s in zip(masks, truth.silhouettes):
        iou = (m & s).sum() / (m | s).sum()
        assert iou >= 0.95


def test_fully_occluded_object_gives_empty_mask(small_scene):
    ds, _ = small_scene
    f = ds.frames[1]
    hidden = np.full(f.depth.shape, 0.3)  # a wall right in front of the camera
    cloud = box_filter(backproject_cloud(ds), ds.box)
    assert not project_mask(ds.intrinsics, f.pose, hidden, cloud, 0.05).any()


def test_empty_box_falls_back_to_silhouette(small_scene, caplog):
    ds, _ = small_scene
    box = BBox3((1.5, 1.5, 1.8), (0.05, 0.05, 0.05), np.eye(3))
    with caplog.at_level(logging.WARNING):
        masks = masks_from_box(ds, box)
    assert "no scene points" in caplog.text
    for f, m in zip(ds.frames, masks):
        assert np.array_equal(m, box_silhouette(ds.intrinsics, f.pose, f.shape, box))
    with pytest.raises(ValueError):
        masks_from_box(SceneDataset(ds.frames, ds.intrinsics, None, ds.split))
