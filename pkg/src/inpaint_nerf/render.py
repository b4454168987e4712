"""Stratified ray sampling and the volume-rendering quadrature.

For samples ``t_1 < ... < t_K`` on a ray with ``t_{K+1} := t_far``::

    delta_i = t_{i+1} - t_i
    T_i     = exp(-sum_{j<i} sigma_j delta_j)
    w_i     = T_i (1 - exp(-sigma_i delta_i))
    color   = sum_i w_i c_i
    depth   = sum_i w_i t_i

All functions accept a leading batch shape and operate on the last axis.
Unaccumulated weight renders black; there is no background color.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import generate_rays, ray_aabb
from .field import FieldParams, as_tensors, encode_inputs, field_forward

__all__ = [
    "hash_uniform",
    "stratified_samples",
    "sample_edges",
    "composite",
    "render_depth",
    "distortion",
    "SceneBounds",
    "near_far",
    "mlp_field",
    "render_rays",
    "render_frame",
]

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _M64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _M64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _M64
    return x ^ (x >> np.uint64(31))


def hash_uniform(*keys) -> np.ndarray:
    """Counter-based uniforms in [0, 1): a pure function of the integer keys.

    Lets every ray draw its own jitter from (seed, frame, pixel, ...) without
    sharing generator state, so results do not depend on batching or order.
    """
    arrays = np.broadcast_arrays(*[np.asarray(k, dtype=np.int64) for k in keys])
    with np.errstate(over="ignore"):
        h = np.zeros(arrays[0].shape, dtype=np.uint64)
        for k in arrays:
            h = _splitmix64(h ^ k.astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def stratified_samples(t_near, t_far, K: int, jitter=None, rng: np.random.Generator | None = None):
    """One sample per equal-width bin of [t_near, t_far], ascending.

    ``jitter`` (shape (..., K), values in [0, 1)) places each sample inside
    its bin; if absent it is drawn from ``rng``, and with neither the bin
    midpoints are used.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    shape = np.broadcast_shapes(t_near.shape, t_far.shape) + (K,)
    if jitter is None:
        jitter = rng.random(shape) if rng is not None else np.full(shape, 0.5)
    bins = (np.arange(K) + np.asarray(jitter)) / K
    return t_near[..., None] + (t_far - t_near)[..., None] * bins


def sample_edges(t: np.ndarray, t_far) -> np.ndarray:
    """Append t_far to the samples: (..., K) -> (..., K + 1)."""
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), t.shape[:-1])
    return np.concatenate([t, t_far[..., None]], axis=-1)


def composite(sigma, colors, deltas):
    """Alpha compositing along the last sample axis.

    Returns Tensors (color (..., 3), weights (..., K), transmittance (..., K)).
    Differentiable with respect to ``sigma`` and ``colors``.
    """
    sigma = ad.constant(sigma)
    colors = ad.constant(colors)
    tau = sigma * np.asarray(deltas, dtype=np.float64)
    shifted = ad.cumsum(tau, axis=-1) - tau  # exclusive prefix sum
    trans = ad.exp(-shifted)
    alpha = 1.0 - ad.exp(-tau)
    weights = trans * alpha
    color = (weights.reshape(weights.shape + (1,)) * colors).sum(axis=-2)
    return color, weights, trans


def render_depth(weights, t) -> Tensor:
    return (ad.constant(weights) * np.asarray(t, dtype=np.float64)).sum(axis=-1)


def distortion(weights, edges) -> Tensor:
    """sum_{i,j} w_i w_j |m_i - m_j| + 1/3 sum_i w_i^2 delta_i, per ray.

    ``edges`` has K + 1 ascending entries per ray; m_i are bin midpoints. The
    pairwise sum is evaluated in O(K) with prefix sums (midpoints ascend).
    """
    w = ad.constant(weights)
    edges = np.asarray(edges, dtype=np.float64)
    mids = 0.5 * (edges[..., 1:] + edges[..., :-1])
    deltas = edges[..., 1:] - edges[..., :-1]
    wm = w * mids
    w_before = ad.cumsum(w, axis=-1) - w
    wm_before = ad.cumsum(wm, axis=-1) - wm
    pairwise = 2.0 * (w * (w_before * mids - wm_before)).sum(axis=-1)
    self_term = (ad.square(w) * deltas).sum(axis=-1) * (1.0 / 3.0)
    return pairwise + self_term


@dataclass(frozen=True)
class SceneBounds:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    near_min: float = 0.05

    @classmethod
    def from_points(cls, points: np.ndarray, inflate: float = 0.1) -> "SceneBounds":
        lo, hi = points.min(axis=0), points.max(axis=0)
        pad = 0.5 * inflate * (hi - lo)
        return cls(tuple((lo - pad).tolist()), tuple((hi + pad).tolist()))

    @classmethod
    def from_dict(cls, data: dict) -> "SceneBounds":
        return cls(tuple(data["lo"]), tuple(data["hi"]), data.get("near_min", 0.05))

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "near_min": self.near_min}

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def radius(self) -> float:
        return float(0.5 * np.max(np.asarray(self.hi) - np.asarray(self.lo)))


def near_far(bounds: SceneBounds, origins: np.ndarray, dirs: np.ndarray):
    enter, exit_ = ray_aabb(origins, dirs, np.asarray(bounds.lo), np.asarray(bounds.hi))
    near = np.maximum(enter, bounds.near_min)
    far = np.maximum(exit_, near + 1e-3)
    return near, far


def mlp_field(params: FieldParams, weights: dict[str, Tensor] | None = None):
    """Wrap the scene MLP as a field callable for :func:`render_rays`."""
    if weights is None:
        weights = as_tensors(params, requires_grad=False)

    def field_fn(points: np.ndarray, dirs: np.ndarray):
        n_rays, K = points.shape[:2]
        pos_enc, dir_enc = encode_inputs(params.config, points.reshape(-1, 3), dirs)
        sigma, color, color_mv = field_forward(params.config, weights, pos_enc, dir_enc, samples_per_dir=K)
        return sigma.reshape(n_rays, K), color.reshape(n_rays, K, 3), color_mv.reshape(n_rays, K, 3)

    return field_fn


def render_rays(field_fn, origins: np.ndarray, dirs: np.ndarray, near: np.ndarray, far: np.ndarray,
                jitter: np.ndarray, detach_color: np.ndarray | None = None) -> dict[str, Tensor]:
    """Differentiable render of R rays with K = jitter.shape[-1] samples each.

    ``field_fn(points (R, K, 3), dirs (R, 3))`` returns Tensors sigma (R, K),
    color (R, K, 3) and color_mv (R, K, 3); see :func:`mlp_field`.

    ``detach_color`` (R,) marks rays whose view-dependent color must not move
    density: their compositing weights are detached for the color sum. The
    MV color always uses detached weights. Depth and distortion always use
    the live weights.
    """
    n_rays, K = jitter.shape
    t = stratified_samples(near, far, K, jitter=jitter)
    edges = sample_edges(t, far)
    deltas = edges[..., 1:] - edges[..., :-1]
    pts = origins[:, None, :] + dirs[:, None, :] * t[..., None]
    sigma, color, color_mv = field_fn(pts, dirs)

    _, w, _ = composite(sigma, color, deltas)
    w_frozen = ad.stop_gradient(w)
    if detach_color is None or not np.any(detach_color):
        w_color = w
    else:
        live = (~np.asarray(detach_color, dtype=bool)).astype(np.float64)[:, None]
        w_color = w * live + w_frozen * (1.0 - live)
    rgb = (w_color.reshape(n_rays, K, 1) * color).sum(axis=1)
    rgb_mv = (w_frozen.reshape(n_rays, K, 1) * color_mv).sum(axis=1)
    return {
        "rgb": rgb,
        "rgb_mv": rgb_mv,
        "depth": render_depth(w, t),
        "dist": distortion(w, edges),
        "weights": w,
        "t": Tensor(t),
    }


def render_frame(field, K_intr: np.ndarray, pose: np.ndarray, height: int, width: int,
                 bounds: SceneBounds, n_samples: int = 64, seed: int | None = None, frame: int = 0,
                 head: str = "mv", chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """Render an (H, W, 3) color image and an (H, W) z-depth image.

    ``field`` is a :class:`FieldParams` or a field callable.

    ``head`` picks the color head ("mv" for the final object-free output,
    "view" for the view-dependent one). Without ``seed`` samples sit at bin
    midpoints; with it, per-pixel jitter comes from :func:`hash_uniform`.
    """
    if head not in ("mv", "view"):
        raise ValueError(f"head must be 'mv' or 'view', got {head!r}")
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    rows, cols = rows.reshape(-1), cols.reshape(-1)
    origins, dirs, zscale = generate_rays(K_intr, pose, rows, cols)
    near, far = near_far(bounds, origins, dirs)
    if seed is None:
        jitter = np.full((rows.size, n_samples), 0.5)
    else:
        jitter = hash_uniform(seed, frame, rows[:, None], cols[:, None], np.arange(n_samples)[None, :])
    field_fn = mlp_field(field) if isinstance(field, FieldParams) else field
    rgb = np.zeros((rows.size, 3))
    depth = np.zeros(rows.size)
    for s in range(0, rows.size, chunk):
        sl = slice(s, s + chunk)
        out = render_rays(field_fn, origins[sl], dirs[sl], near[sl], far[sl], jitter[sl])
        rgb[sl] = out["rgb_mv" if head == "mv" else "rgb"].data
        depth[sl] = out["depth"].data
    return rgb.reshape(height, width, 3), (depth * zscale).reshape(height, width)
