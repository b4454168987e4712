"""Image and depth metrics restricted to a mask, and per-scene reports.

Every metric reads pixels inside the mask only, so anything outside it can
change freely without moving the numbers. SSIM uses mask-normalized local
statistics: each Gaussian window averages over its masked pixels alone.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .field import FieldParams
from .render import SceneBounds, render_frame
from .scene import SceneDataset
from .trainer import ablation_subset
from .objective import ActiveSet

log = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5  # 11 x 11 window
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class EmptyMaskError(ValueError):
    pass


def _mask(mask, shape) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != tuple(shape[:2]):
        raise ValueError(f"mask {m.shape} does not match image {shape[:2]}")
    if not m.any():
        raise EmptyMaskError("empty mask")
    return m


def masked_psnr(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Peak-1 PSNR over masked pixels and all channels, capped at 99 dB."""
    m = _mask(mask, gt.shape)
    diff = np.asarray(pred, dtype=np.float64)[m] - np.asarray(gt, dtype=np.float64)[m]
    mse = float(np.mean(diff ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss(x: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(x, SSIM_SIGMA, mode="constant", cval=0.0,
                                   truncate=SSIM_RADIUS / SSIM_SIGMA)


def masked_ssim(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """Mean SSIM of the RGB-mean luminance over window centers inside the mask."""
    m = _mask(mask, gt.shape)
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.ndim == 3:
        x, y = x.mean(axis=-1), y.mean(axis=-1)
    mf = m.astype(np.float64)
    # zero out everything outside the mask so it cannot reach any statistic
    x = np.where(m, x, 0.0)
    y = np.where(m, y, 0.0)
    norm = _gauss(mf)
    safe = np.where(norm > 0, norm, 1.0)

    def local(a):
        return _gauss(a) / safe

    mx, my = local(x), local(y)
    vx = local(x * x) - mx * mx
    vy = local(y * y) - my * my
    cxy = local(x * y) - mx * my
    s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
    return float(np.mean(s[m]))


def masked_depth_error(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """(mean |diff|, mean diff^2) over masked pixels with valid ground truth."""
    m = _mask(mask, gt.shape) & (np.asarray(gt) > 0)
    if not m.any():
        raise EmptyMaskError("no valid ground-truth depth inside the mask")
    d = np.asarray(pred, dtype=np.float64)[m] - np.asarray(gt, dtype=np.float64)[m]
    return float(np.mean(np.abs(d))), float(np.mean(d * d))


METRICS = ("psnr", "ssim", "depth_l1", "depth_l2")


@dataclass
class FrameMetrics:
    frame: int
    psnr: float
    ssim: float
    depth_l1: float
    depth_l2: float


@dataclass
class EvalReport:
    frames: list[FrameMetrics] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    region: str = "mask"

    @property
    def scene(self) -> dict[str, float]:
        if not self.frames:
            return {k: float("nan") for k in METRICS}
        return {k: float(np.mean([getattr(f, k) for f in self.frames])) for k in METRICS}

    def to_dict(self) -> dict:
        return {"region": self.region, "scene": self.scene, "frames": [asdict(f) for f in self.frames],
                "skipped": self.skipped}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", *METRICS])
        for f in self.frames:
            w.writerow([f.frame, *(repr(getattr(f, k)) for k in METRICS)])
        w.writerow(["scene", *(repr(self.scene[k]) for k in METRICS)])
        return buf.getvalue()

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(self.to_json())
        (out / "eval.csv").write_text(self.to_csv())


def scene_average(reports: list[EvalReport]) -> dict[str, float]:
    """Frames are averaged within each scene first, then scenes are averaged."""
    per = [r.scene for r in reports if r.frames]
    return {k: float(np.mean([p[k] for p in per])) if per else float("nan") for k in METRICS}


def frame_metrics(index: int, rgb, depth, gt_rgb, gt_depth, mask) -> FrameMetrics:
    l1, l2 = masked_depth_error(depth, gt_depth, mask)
    return FrameMetrics(index, masked_psnr(rgb, gt_rgb, mask), masked_ssim(rgb, gt_rgb, mask), l1, l2)


def region_mask(frame, region: str) -> np.ndarray:
    if region == "mask":
        return frame.mask
    if region == "unmasked":
        return ~frame.mask
    if region == "full":
        return np.ones_like(frame.mask)
    raise ValueError(f"unknown region {region!r}")


def evaluate(params: FieldParams | None, ds: SceneDataset, bounds: SceneBounds | None = None,
             frames: list[int] | None = None, n_samples: int = 64, region: str = "mask",
             renderer=None) -> EvalReport:
    """Render the evaluation frames with the MV head and score them against ground truth.

    Ground truth is the object-free capture (``gt_rgb`` / ``gt_depth``) when
    present, else the frame's own color/depth. ``renderer(frame)`` can replace
    the field renderer; it must return (rgb, z-depth).
    """
    frames = ds.test_indices if frames is None else frames
    report = EvalReport(region=region)
    for n in frames:
        f = ds.frames[n]
        m = region_mask(f, region)
        if not m.any():
            log.warning("frame %d: empty %s region, skipped", n, region)
            report.skipped.append(n)
            continue
        if renderer is not None:
            rgb, depth = renderer(f)
        else:
            rgb, depth = render_frame(params, ds.intrinsics, f.pose, *ds.resolution, bounds,
                                      n_samples=n_samples, head="mv")
        gt_rgb = f.gt_rgb if f.gt_rgb is not None else f.rgb
        gt_depth = f.gt_depth if f.gt_depth is not None else f.depth
        try:
            report.frames.append(frame_metrics(n, rgb, depth, gt_rgb, gt_depth, m))
        except EmptyMaskError as exc:
            log.warning("frame %d: %s, skipped", n, exc)
            report.skipped.append(n)
    return report


def ablation_subsets(ds: SceneDataset, mode: str, pool: list[int] | None = None) -> ActiveSet:
    """Fixed baseline view set: every 10th / 50th frame (phase 0), the middle frame, or all."""
    pool = list(range(len(ds))) if pool is None else pool
    return ActiveSet(set(ablation_subset(mode, pool)))
