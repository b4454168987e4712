"""Scene datasets and their on-disk layout.

A scene directory holds::

    rgb/00000.png            8-bit color frames (the sequence with the object)
    depth/00000.pfm          z-depth in meters, float32 PFM (0 = invalid);
                             depth/00000.png (uint16 millimeters) also accepted
    mask/00000.png           object masks, 0 / 255
    inpaint_rgb/00000.png    optional inpainted color
    inpaint_depth/00000.pfm  optional inpainted depth
    gt_rgb/, gt_depth/       optional object-free reference for evaluation
    poses.txt                one row-major camera-to-world 4x4 per line
    intrinsics.txt           3x3 pinhole matrix
    box.json                 {"center", "half_extents", "rotation"}
    split.json               {"train": [...], "test": [...]}
    meta.json                optional free-form metadata
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import CameraError, check_intrinsics, check_pose


class SceneError(ValueError):
    """Scene directory or dataset failed validation; ``problems`` lists every issue."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class BBox3:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.any(self.half_extents <= 0):
            raise ValueError("box half-extents must be positive")
        R = self.rotation
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("box rotation is not orthonormal")

    def local(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.center) @ self.rotation

    def contains(self, points: np.ndarray) -> np.ndarray:
        return np.all(np.abs(self.local(points)) <= self.half_extents, axis=-1)

    def corners(self) -> np.ndarray:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=np.float64)
        return self.center + (signs * self.half_extents) @ self.rotation.T

    def to_json(self) -> dict:
        return {
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": self.rotation.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "BBox3":
        return cls(data["center"], data["half_extents"], data.get("rotation", np.eye(3)))


@dataclass
class Frame:
    index: int
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) meters, 0 = invalid
    pose: np.ndarray  # (4, 4) camera-to-world
    mask: np.ndarray  # (H, W) bool, True = inpaint
    inpaint_rgb: np.ndarray | None = None
    inpaint_depth: np.ndarray | None = None
    gt_rgb: np.ndarray | None = None
    gt_depth: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.rgb.shape[:2]


@dataclass
class SceneDataset:
    frames: list[Frame]
    intrinsics: np.ndarray
    box: BBox3 | None = None
    split: dict[str, list[int]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].shape

    @property
    def train_indices(self) -> list[int]:
        return list(self.split.get("train", range(len(self.frames))))

    @property
    def test_indices(self) -> list[int]:
        return list(self.split.get("test", []))

    def validate(self) -> None:
        problems = []
        if not self.frames:
            problems.append("dataset has no frames")
        try:
            check_intrinsics(self.intrinsics)
        except CameraError as exc:
            problems.append(f"intrinsics: {exc}")
        if self.frames:
            h, w = self.resolution
            for f in self.frames:
                if f.rgb.shape != (h, w, 3):
                    problems.append(f"frame {f.index}: rgb shape {f.rgb.shape} != {(h, w, 3)}")
                for name in ("depth", "mask", "inpaint_depth", "gt_depth"):
                    arr = getattr(f, name)
                    if arr is not None and arr.shape != (h, w):
                        problems.append(f"frame {f.index}: {name} shape {arr.shape} != {(h, w)}")
                for name in ("inpaint_rgb", "gt_rgb"):
                    arr = getattr(f, name)
                    if arr is not None and arr.shape != (h, w, 3):
                        problems.append(f"frame {f.index}: {name} shape {arr.shape} != {(h, w, 3)}")
                try:
                    check_pose(f.pose)
                except CameraError as exc:
                    problems.append(f"frame {f.index}: {exc}")
        n = len(self.frames)
        for key, idx in self.split.items():
            bad = [i for i in idx if not 0 <= i < n]
            if bad:
                problems.append(f"split '{key}' references unknown frames {bad}")
        if problems:
            raise SceneError(problems)


def every_nth_split(n_frames: int, every: int = 8) -> dict[str, list[int]]:
    """Hold out frames 0, every, 2*every, ... for testing."""
    test = [i for i in range(n_frames) if i % every == 0]
    train = [i for i in range(n_frames) if i % every != 0]
    return {"train": train, "test": test}


# ------------------------------------------------------------------ file I/O


def write_pfm(path, data: np.ndarray) -> None:
    data = np.asarray(data, dtype="<f4")
    h, w = data.shape[:2]
    color = data.ndim == 3
    header = f"{'PF' if color else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(np.flipud(data)).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+(-?[\d.eE+-]+)\s", raw)
    if m is None:
        raise SceneError([f"{path}: not a PFM file"])
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(raw[m.end():], dtype=dtype, count=w * h * channels)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return np.flipud(arr.reshape(shape)).astype(np.float64)


def write_rgb(path, rgb: np.ndarray) -> None:
    arr = np.clip(np.floor(np.asarray(rgb) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


def read_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) >= 128


def write_depth(path, depth: np.ndarray) -> None:
    path = Path(path)
    if path.suffix == ".png":
        mm = np.clip(np.round(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path)
    else:
        write_pfm(path, depth)


def read_depth(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        return np.asarray(Image.open(path), dtype=np.float64) / 1000.0
    return read_pfm(path)


def _frame_name(i: int, ext: str) -> str:
    return f"{i:05d}.{ext}"


def save_scene(ds: SceneDataset, root, depth_format: str = "pfm") -> Path:
    ds.validate()
    root = Path(root)
    for sub in ("rgb", "depth", "mask"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for f in ds.frames:
        i = f.index
        write_rgb(root / "rgb" / _frame_name(i, "png"), f.rgb)
        write_depth(root / "depth" / _frame_name(i, depth_format), f.depth)
        write_mask(root / "mask" / _frame_name(i, "png"), f.mask)
        for attr, sub, kind in (
            ("inpaint_rgb", "inpaint_rgb", "rgb"),
            ("inpaint_depth", "inpaint_depth", "depth"),
            ("gt_rgb", "gt_rgb", "rgb"),
            ("gt_depth", "gt_depth", "depth"),
        ):
            arr = getattr(f, attr)
            if arr is None:
                continue
            (root / sub).mkdir(exist_ok=True)
            if kind == "rgb":
                write_rgb(root / sub / _frame_name(i, "png"), arr)
            else:
                write_depth(root / sub / _frame_name(i, depth_format), arr)
    with open(root / "poses.txt", "w") as fh:
        for f in ds.frames:
            fh.write(" ".join(repr(float(v)) for v in f.pose.reshape(-1)) + "\n")
    np.savetxt(root / "intrinsics.txt", ds.intrinsics, fmt="%.17g")
    if ds.box is not None:
        (root / "box.json").write_text(json.dumps(ds.box.to_json(), indent=2))
    (root / "split.json").write_text(json.dumps(ds.split, indent=2))
    if ds.meta:
        (root / "meta.json").write_text(json.dumps(ds.meta, indent=2, sort_keys=True))
    return root


def _find_depth(folder: Path, i: int) -> Path | None:
    for ext in ("pfm", "png"):
        p = folder / _frame_name(i, ext)
        if p.exists():
            return p
    return None


def load_scene(root, require_masks: bool = True) -> SceneDataset:
    """Load and validate a scene directory, reporting every problem at once."""
    root = Path(root)
    problems: list[str] = []
    if not root.is_dir():
        raise SceneError([f"{root}: not a directory"])
    if not (root / "poses.txt").exists():
        raise SceneError([f"{root}: missing poses.txt"])
    if not (root / "intrinsics.txt").exists():
        problems.append("missing intrinsics.txt")
    poses = np.loadtxt(root / "poses.txt", ndmin=2)
    if poses.shape[1] != 16:
        raise SceneError([f"poses.txt: expected 16 values per line, got {poses.shape[1]}"])
    K = np.loadtxt(root / "intrinsics.txt") if (root / "intrinsics.txt").exists() else np.eye(3)

    frames = []
    for i, row in enumerate(poses):
        rgb_path = root / "rgb" / _frame_name(i, "png")
        depth_path = _find_depth(root / "depth", i)
        mask_path = root / "mask" / _frame_name(i, "png")
        missing = []
        if not rgb_path.exists():
            missing.append(f"rgb/{i:05d}.png")
        if require_masks and not mask_path.exists():
            missing.append(f"mask/{i:05d}.png")
        if depth_path is None:
            missing.append(f"depth/{i:05d}.pfm")
        if missing:
            problems.append(f"frame {i}: missing {', '.join(missing)}")
            continue
        rgb = read_rgb(rgb_path)
        mask = read_mask(mask_path) if mask_path.exists() else np.zeros(rgb.shape[:2], dtype=bool)
        frame = Frame(i, rgb, read_depth(depth_path), row.reshape(4, 4), mask)
        p = root / "inpaint_rgb" / _frame_name(i, "png")
        if p.exists():
            frame.inpaint_rgb = read_rgb(p)
        p = _find_depth(root / "inpaint_depth", i)
        if p is not None:
            frame.inpaint_depth = read_depth(p)
        p = root / "gt_rgb" / _frame_name(i, "png")
        if p.exists():
            frame.gt_rgb = read_rgb(p)
        p = _find_depth(root / "gt_depth", i)
        if p is not None:
            frame.gt_depth = read_depth(p)
        frames.append(frame)
    if problems:
        raise SceneError(problems)

    box = BBox3.from_json(json.loads((root / "box.json").read_text())) if (root / "box.json").exists() else None
    split = json.loads((root / "split.json").read_text()) if (root / "split.json").exists() else every_nth_split(len(frames))
    meta = json.loads((root / "meta.json").read_text()) if (root / "meta.json").exists() else {}
    ds = SceneDataset(frames, K, box, split, meta)
    ds.validate()
    return ds
