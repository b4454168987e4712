"""Per-frame 2D inpainting of color and depth.

Depth goes through the same 8-bit RGB path as color: clip to 5 m, map
[0, 5] m linearly to [0, 255], copy into three channels, inpaint, decode.
Inpainters are either an external command (PNG files in, PNG file out) or
the built-in harmonic fill used for tests and offline runs.
"""

from __future__ import annotations

import logging
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Literal

import numpy as np
from PIL import Image

from .scene import Frame, SceneDataset

log = logging.getLogger(__name__)

DEPTH_CLIP = 5.0
DEPTH_LEVELS = 256


class InpaintError(RuntimeError):
    pass


@dataclass
class InpaintRequest:
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    kind: Literal["color", "depth"] = "color"
    frame: int | None = None

    def __post_init__(self):
        if self.image.shape[:2] != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} differ in size")


def encode_depth(depth: np.ndarray, clip_max: float = DEPTH_CLIP) -> np.ndarray:
    """(H, W) meters -> (H, W, 3) uint8, round-half-up quantization."""
    d = np.clip(np.asarray(depth, dtype=np.float64), 0.0, clip_max)
    v = np.floor((DEPTH_LEVELS - 1) * d / clip_max + 0.5).astype(np.uint8)
    return np.repeat(v[..., None], 3, axis=-1)


def decode_depth(img: np.ndarray, clip_max: float = DEPTH_CLIP) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    v = img.mean(axis=-1) if img.ndim == 3 else img
    return clip_max * v / (DEPTH_LEVELS - 1)


def harmonic_fill(values: np.ndarray, mask: np.ndarray, tol: float = 1e-4,
                  max_iter: int = 200_000) -> np.ndarray:
    """Replace masked values by the mean of their in-image 4-neighbors until stable.

    Simultaneous (Jacobi) updates, so the result does not depend on any
    traversal order. Unmasked values are returned bit-exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.all():
        raise InpaintError("mask covers the whole image; nothing to diffuse from")
    out = values.copy()
    if not mask.any():
        return out
    squeeze = out.ndim == 2
    if squeeze:
        out = out[..., None]
    h, w = mask.shape
    count = np.full((h, w), 4.0)
    count[0, :] -= 1
    count[-1, :] -= 1
    count[:, 0] -= 1
    count[:, -1] -= 1
    count = count[..., None]
    out[mask] = out[~mask].mean(axis=0)
    m3 = mask[..., None]
    nbr = np.empty_like(out)
    for _ in range(max_iter):
        nbr[:] = 0.0
        nbr[1:] += out[:-1]
        nbr[:-1] += out[1:]
        nbr[:, 1:] += out[:, :-1]
        nbr[:, :-1] += out[:, 1:]
        new = np.where(m3, nbr / count, out)
        delta = np.max(np.abs(new - out))
        out = new
        if delta < tol:
            break
    else:
        log.warning("harmonic fill stopped after %d iterations (delta %.2e)", max_iter, delta)
    return out[..., 0] if squeeze else out


def inpaint_builtin(request: InpaintRequest) -> np.ndarray:
    """Deterministic smooth fill of the masked region of an 8-bit image."""
    img = np.asarray(request.image)
    filled = harmonic_fill(img.astype(np.float64) / 255.0, request.mask)
    out = np.clip(np.floor(filled * 255.0 + 0.5), 0, 255).astype(np.uint8)
    out[~request.mask] = img[~request.mask]
    return out


def inpaint_external(request: InpaintRequest, command: str, timeout: float = 300.0) -> np.ndarray:
    """Run ``command`` (with ``{image}``, ``{mask}``, ``{out}`` placeholders) on one request.

    The tool's output is trusted only inside the mask.
    """
    if not request.mask.any():
        return np.array(request.image, copy=True)
    label = f"frame {request.frame} ({request.kind})" if request.frame is not None else request.kind
    with tempfile.TemporaryDirectory(prefix="inpaint_") as tmp:
        tmp = Path(tmp)
        image_path, mask_path, out_path = tmp / "image.png", tmp / "mask.png", tmp / "out.png"
        Image.fromarray(np.asarray(request.image, dtype=np.uint8), mode="RGB").save(image_path)
        Image.fromarray(np.where(request.mask, 255, 0).astype(np.uint8), mode="L").save(mask_path)
        argv = shlex.split(command.format(image=image_path, mask=mask_path, out=out_path))
        try:
            proc = subprocess.run(argv, capture_output=True, timeout=timeout, check=False)
        except subprocess.TimeoutExpired:
            raise InpaintError(f"{label}: inpainter timed out after {timeout:.0f}s") from None
        except OSError as exc:
            raise InpaintError(f"{label}: cannot run inpainter: {exc}") from None
        if proc.returncode != 0:
            stderr = proc.stderr.decode(errors="replace").strip()[-500:]
            raise InpaintError(f"{label}: inpainter exited with {proc.returncode}: {stderr}")
        try:
            result = np.asarray(Image.open(out_path).convert("RGB"))
        except (OSError, ValueError) as exc:
            raise InpaintError(f"{label}: unreadable inpainter output: {exc}") from None
    if result.shape != request.image.shape:
        raise InpaintError(f"{label}: output shape {result.shape} != input {request.image.shape}")
    return np.where(request.mask[..., None], result, request.image).astype(np.uint8)


Inpainter = Callable[[InpaintRequest], np.ndarray]


def external_inpainter(command: str, timeout: float = 300.0) -> Inpainter:
    return lambda req: inpaint_external(req, command, timeout=timeout)


def inpaint_frame(frame: Frame, inpainter: Inpainter) -> tuple[np.ndarray, np.ndarray]:
    """Inpaint color and depth of one frame independently; returns (rgb, depth)."""
    rgb8 = np.clip(np.floor(frame.rgb * 255.0 + 0.5), 0, 255).astype(np.uint8)
    color = inpainter(InpaintRequest(rgb8, frame.mask, "color", frame.index))
    depth8 = inpainter(InpaintRequest(encode_depth(frame.depth), frame.mask, "depth", frame.index))
    rgb = np.where(frame.mask[..., None], color / 255.0, frame.rgb)
    depth = np.where(frame.mask, decode_depth(depth8), frame.depth)
    return rgb, depth


def inpaint_dataset(ds: SceneDataset, inpainter: Inpainter, workers: int = 1) -> SceneDataset:
    """Fill ``inpaint_rgb`` / ``inpaint_depth`` for every frame (in place)."""
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(lambda f: inpaint_frame(f, inpainter), ds.frames))
    for frame, (rgb, depth) in zip(ds.frames, results):
        frame.inpaint_rgb, frame.inpaint_depth = rgb, depth
    return ds
