"""Training objective with per-frame confidence weighting of inpainted pixels.

Pixels outside a frame's mask are supervised by the captured color/depth of
every frame. Pixels inside the mask are supervised by the inpainted
color/depth, but only for frames in the active set, and scaled by that
frame's confidence ``exp(-u_n)``. The distortion regularizer covers the same
pixels without confidence weighting, and ``sum_{n in active} u_n`` keeps the
confidences from collapsing to zero.

Each pixel of a batch carries a ``weight`` that turns the batch sum into an
estimate of the objective (see :class:`PixelBatch`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    rgb: float = 1.0
    depth: float = 1.0
    reg: float = 0.005
    dist: float = 1.0

    def __post_init__(self):
        if min(self.rgb, self.depth, self.reg, self.dist) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class ActiveSet:
    """Frames whose masked pixels currently supervise training."""

    members: set[int] = field(default_factory=set)

    def __post_init__(self):
        self.members = {int(m) for m in self.members}

    def __contains__(self, n) -> bool:
        return int(n) in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(sorted(self.members))

    def sorted(self) -> list[int]:
        return sorted(self.members)

    def indicator(self, n_frames: int) -> np.ndarray:
        out = np.zeros(n_frames, dtype=bool)
        out[self.sorted()] = True
        return out


@dataclass
class PixelBatch:
    frame: np.ndarray  # (B,) int
    masked: np.ndarray  # (B,) bool
    target_rgb: np.ndarray  # (B, 3)
    target_depth: np.ndarray  # (B,) ray distance in meters
    depth_valid: np.ndarray  # (B,) bool
    weight: np.ndarray  # (B,) per-pixel estimator weight
    origins: np.ndarray | None = None
    dirs: np.ndarray | None = None
    near: np.ndarray | None = None
    far: np.ndarray | None = None
    jitter: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.frame)

    def subset(self, idx) -> "PixelBatch":
        def pick(a):
            return None if a is None else a[idx]

        return PixelBatch(*(pick(getattr(self, f)) for f in self.__dataclass_fields__))

    def check_active(self, active: ActiveSet) -> None:
        bad = sorted({int(n) for n in self.frame[self.masked] if n not in active})
        if bad:
            raise ContractError(f"masked pixels of inactive frames {bad} in batch")


def uncertainty(raw: Tensor) -> Tensor:
    # subgradient 1 at 0 so frames can leave u = 0, where every one starts
    return ad.relu(raw, grad_at_zero=1.0)


def confidences(raw: Tensor) -> Tensor:
    return ad.exp(-uncertainty(raw))


def _pixel_weights(batch: PixelBatch, conf: Tensor | np.ndarray) -> Tensor:
    """weight * (1 outside mask, exp(-u_n) inside)."""
    conf = ad.constant(conf)
    m = batch.masked.astype(np.float64)
    per_pixel = conf[batch.frame] * m + (1.0 - m)
    return per_pixel * batch.weight


def rgb_loss(batch: PixelBatch, rgb, conf, active: ActiveSet) -> Tensor:
    """sum ||target - rgb||^2, masked pixels scaled by their frame's confidence.

    ``conf`` holds one confidence per frame (indexable by ``batch.frame``).
    """
    batch.check_active(active)
    resid = ad.square(ad.constant(rgb) - batch.target_rgb).sum(axis=-1)
    return (resid * _pixel_weights(batch, conf)).sum()


def depth_loss(batch: PixelBatch, depth, conf, active: ActiveSet) -> Tensor:
    """sum |target - depth| over pixels with valid target depth."""
    batch.check_active(active)
    resid = ad.abs(ad.constant(depth) - batch.target_depth) * batch.depth_valid.astype(np.float64)
    return (resid * _pixel_weights(batch, conf)).sum()


def reg_loss(u, active: ActiveSet) -> Tensor:
    idx = np.array(active.sorted(), dtype=np.int64)
    if idx.size == 0:
        return Tensor(0.0)
    return ad.constant(u)[idx].sum()


def dist_loss(batch: PixelBatch, dist) -> Tensor:
    return (ad.constant(dist) * batch.weight).sum()


COMPONENTS = ("rgb", "rgb_mv", "depth", "reg", "dist")


def total_loss(components: dict[str, Tensor | float], weights: LossWeights = LossWeights()) -> Tensor:
    scale = {"rgb": weights.rgb, "rgb_mv": weights.rgb, "depth": weights.depth,
             "reg": weights.reg, "dist": weights.dist}
    total = Tensor(0.0)
    for name in COMPONENTS:
        if name in components:
            total = total + ad.constant(components[name]) * scale[name]
    return total


def objective(batch: PixelBatch, rendered: dict[str, Tensor], raw_uncertainty: Tensor,
              active: ActiveSet, weights: LossWeights = LossWeights(),
              use_confidence: bool = True) -> dict[str, Tensor]:
    """All loss components plus ``total`` for one rendered batch.

    With ``use_confidence=False`` every confidence is fixed at 1 and the
    uncertainty regularizer is dropped (plain training on all inpaintings).
    """
    if use_confidence:
        u = uncertainty(raw_uncertainty)
        conf = ad.exp(-u)
        reg = reg_loss(u, active)
    else:
        conf = np.ones(raw_uncertainty.shape)
        reg = Tensor(0.0)
    parts = {
        "rgb": rgb_loss(batch, rendered["rgb"], conf, active),
        "rgb_mv": rgb_loss(batch, rendered["rgb_mv"], conf, active),
        "depth": depth_loss(batch, rendered["depth"], conf, active),
        "reg": reg,
        "dist": dist_loss(batch, rendered["dist"]),
    }
    parts["total"] = total_loss(parts, weights)
    return parts


def admissible(frames: Iterable[int], masked: np.ndarray, active: ActiveSet) -> np.ndarray:
    """Which pixels may be sampled: all unmasked ones, masked ones of active frames."""
    frames = np.asarray(list(frames) if not isinstance(frames, np.ndarray) else frames)
    return ~masked | active.indicator(int(frames.max()) + 1 if frames.size else 0)[frames]
