import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inpaint_nerf import autodiff as ad
from inpaint_nerf.autodiff import Tensor, grad_check
from inpaint_nerf.camera import CameraError, generate_ray, generate_rays, look_at
from inpaint_nerf.render import (
    SceneBounds,
    composite,
    distortion,
    hash_uniform,
    render_depth,
    render_frame,
    sample_edges,
    stratified_samples,
)

from oracles import composite_loop, depth_loop, distortion_loop


def test_composite_worked_example():
    colors = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    color, w, T = composite(Tensor([1.0, 1.0]), Tensor(colors), np.array([0.5, 0.5]))
    np.testing.assert_allclose(w.data, [0.393469, 0.238651], atol=5e-7)
    np.testing.assert_allclose(color.data, [0.393469, 0.238651, 0.0], atol=5e-7)
    np.testing.assert_allclose(T.data, [1.0, 0.606531], atol=5e-7)
    assert render_depth(w, np.array([1.0, 1.5])).item() == pytest.approx(0.751446, abs=5e-7)


def test_composite_empty_and_opaque():
    c = np.random.default_rng(0).uniform(size=(4, 3))
    color, w, T = composite(Tensor(np.zeros(4)), Tensor(c), np.full(4, 0.1))
    assert np.all(w.data == 0) and np.all(color.data == 0) and np.all(T.data == 1)
    color, w, _ = composite(Tensor([1e6, 1.0, 1.0, 1.0]), Tensor(c), np.full(4, 0.1))
    assert w.data[0] == pytest.approx(1.0)
    np.testing.assert_allclose(color.data, c[0], atol=1e-12)


def test_depth_examples():
    assert render_depth(Tensor(np.zeros(3)), np.array([1.0, 2.0, 3.0])).item() == 0.0
    _, w, _ = composite(Tensor([1e6, 0.0]), Tensor(np.ones((2, 3))), np.array([0.01, 1.0]))
    assert render_depth(w, np.array([2.0, 3.0])).item() == pytest.approx(2.0)


def test_distortion_examples():
    assert distortion(Tensor(np.zeros(3)), np.array([0.0, 1.0, 2.0, 3.0])).item() == 0.0
    assert distortion(Tensor([1.0]), np.array([0.0, 0.1])).item() == pytest.approx(0.1 / 3.0, abs=1e-12)
    assert distortion(Tensor([0.5, 0.5]), np.array([0.0, 0.5, 1.0])).item() == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_distortion_prefers_concentrated_mass():
    edges = np.linspace(0.0, 1.0, 11)
    one = np.zeros(10)
    one[4] = 0.8
    split = np.zeros(10)
    split[0] = split[9] = 0.4
    assert distortion(Tensor(split), edges).item() > distortion(Tensor(one), edges).item() >= 0.0


def test_stratified_midpoints_and_order():
    np.testing.assert_allclose(stratified_samples(0.0, 1.0, 4), [0.125, 0.375, 0.625, 0.875])
    t = stratified_samples(2.0, 3.0, 1, rng=np.random.default_rng(0))
    assert 2.0 <= t[0] <= 3.0
    for seed in range(20):
        t = stratified_samples(np.array([0.3]), np.array([4.0]), 16, rng=np.random.default_rng(seed))
        assert np.all(np.diff(t) > 0)


def test_last_interval_ends_at_far():
    t = stratified_samples(0.0, 1.0, 4)
    edges = sample_edges(t, 1.0)
    assert edges[-1] == 1.0 and edges[0] == t[0]


def test_generate_ray_examples():
    K = np.array([[100.0, 0, 50], [0, 100.0, 50], [0, 0, 1]])
    ray = generate_ray(K, np.eye(4), (49.5, 49.5))
    np.testing.assert_allclose(ray.direction, [0, 0, 1], atol=1e-15)
    pose = np.eye(4)
    pose[:3, 3] = [1, 2, 3]
    np.testing.assert_array_equal(generate_ray(K, pose, (0, 0)).origin, [1, 2, 3])
    # (49.5, 149.5) lands on the pixel center (50, 150)
    ray = generate_ray(K, np.eye(4), (49.5, 149.5))
    np.testing.assert_allclose(ray.direction, np.array([1.0, 0.0, 1.0]) / np.sqrt(2), atol=1e-15)


def test_singular_intrinsics_rejected():
    with pytest.raises(CameraError):
        generate_ray(np.zeros((3, 3)), np.eye(4), (0, 0))


def test_ray_directions_unit(rng):
    pose = look_at((1.0, 2.0, 1.5), (0.0, 0.0, 0.3))
    K = np.array([[60.0, 0, 32], [0, 60.0, 24], [0, 0, 1]])
    _, d, _ = generate_rays(K, pose, rng.integers(0, 48, 100), rng.integers(0, 64, 100))
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)


def test_oracle_1000_rays(rng):
    """Vectorized quadrature equals explicit loops on 1,000 random rays."""
    K = 12
    sigma = rng.exponential(2.0, (1000, K)) * (rng.uniform(size=(1000, K)) < 0.7)
    colors = rng.uniform(size=(1000, K, 3))
    edges = np.sort(rng.uniform(0.1, 5.0, (1000, K + 1)), axis=1)
    t, deltas = edges[:, :-1], np.diff(edges, axis=1)
    color, w, T = composite(Tensor(sigma), Tensor(colors), deltas)
    depth = render_depth(w, t).data
    dist = distortion(w, edges).data
    worst = 0.0
    for r in range(1000):
        c_ref, w_ref, T_ref = composite_loop(sigma[r], colors[r], deltas[r])
        worst = max(worst, np.max(np.abs(color.data[r] - c_ref)), np.max(np.abs(w.data[r] - w_ref)),
                    np.max(np.abs(T.data[r] - T_ref)), abs(depth[r] - depth_loop(w_ref, t[r])),
                    abs(dist[r] - distortion_loop(w_ref, edges[r])))
        assert sum(w_ref) <= 1.0 + 1e-9
    assert worst <= 1e-12
    assert np.all(w.data.sum(axis=1) <= 1.0 + 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31 - 1), st.floats(0.0, 1e4))
def test_weights_bounded(K, seed, scale):
    r = np.random.default_rng(seed)
    sigma = r.uniform(size=K) * scale
    edges = np.sort(r.uniform(0, 10, K + 1))
    edges[1:] = np.maximum(edges[1:], edges[:-1] + 1e-6)
    _, w, T = composite(Tensor(sigma), Tensor(r.uniform(size=(K, 3))), np.diff(edges))
    assert np.all(w.data >= 0)
    assert w.data.sum() <= 1.0 + 1e-9
    assert T.data[0] == 1.0
    assert np.all(np.diff(T.data) <= 0)
    assert distortion(w, edges).item() >= 0


def test_quadrature_gradients(rng):
    K = 6
    edges = np.sort(rng.uniform(0.5, 3.0, K + 1))
    t, deltas = edges[:-1], np.diff(edges)
    colors = rng.uniform(size=(K, 3))
    sig0 = rng.uniform(0.1, 2.0, K)

    def weights(s):
        return composite(ad.softplus(s), Tensor(colors), deltas)[1]

    assert grad_check(lambda s: composite(ad.softplus(s), Tensor(colors), deltas)[0].sum(), sig0, eps=1e-4) < 1e-4
    assert grad_check(lambda s: render_depth(weights(s), t), sig0, eps=1e-4) < 1e-4
    assert grad_check(lambda s: distortion(weights(s), edges), sig0, eps=1e-4) < 1e-4


def test_hash_uniform_is_pure():
    a = hash_uniform(7, 3, np.arange(10))
    b = hash_uniform(7, 3, np.arange(10))
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, hash_uniform(8, 3, np.arange(10)))


def _plane_field(z_plane=2.0):
    """Opaque white slab at z >= z_plane, empty elsewhere."""

    def field_fn(points, dirs):
        r, k = points.shape[:2]
        sigma = np.where(points[..., 2] >= z_plane, 1e6, 0.0)
        ones = np.ones((r, k, 3))
        return Tensor(sigma), Tensor(ones), Tensor(ones)

    return field_fn


def test_render_frame_plane_oracle():
    K = np.array([[20.0, 0, 8], [0, 20.0, 6], [0, 0, 1]])
    bounds = SceneBounds((-10.0, -10.0, -1.0), (10.0, 10.0, 2.5))
    rgb, depth = render_frame(_plane_field(2.0), K, np.eye(4), 12, 16, bounds, n_samples=512)
    np.testing.assert_allclose(rgb, 1.0, atol=1e-9)
    # bins are ~5 mm long, so the first sample past the plane sits within one bin
    np.testing.assert_allclose(depth, 2.0, atol=0.01)


def test_render_frame_empty_field_and_determinism():
    K = np.array([[20.0, 0, 8], [0, 20.0, 6], [0, 0, 1]])
    bounds = SceneBounds((-1.0, -1.0, -1.0), (1.0, 1.0, 3.0))

    def empty(points, dirs):
        r, k = points.shape[:2]
        return Tensor(np.zeros((r, k))), Tensor(np.full((r, k, 3), 0.5)), Tensor(np.full((r, k, 3), 0.5))

    rgb, depth = render_frame(empty, K, np.eye(4), 12, 16, bounds, n_samples=8)
    assert np.all(rgb == 0) and np.all(depth == 0)
    a = render_frame(_plane_field(1.0), K, np.eye(4), 12, 16, bounds, n_samples=8, seed=3)
    b = render_frame(_plane_field(1.0), K, np.eye(4), 12, 16, bounds, n_samples=8, seed=3)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
