"""Scene MLP: frequency encoding, density trunk, two color heads, per-frame uncertainty.

The trunk maps an encoded position to a density and a feature vector. The
view-dependent head ``color`` sees that feature plus the encoded view
direction. The ``mv`` head only sees a detached copy of the feature, so it is
identical from every direction and cannot push gradients into the trunk.

Per-frame uncertainties are free scalars ``raw_n`` exposed as
``u_n = relu(raw_n)``; the confidence of frame ``n`` is ``exp(-u_n)``.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FieldConfig:
    trunk_depth: int = 8
    trunk_width: int = 256
    head_depth: int = 4
    head_width: int = 128
    pos_freqs: int = 10
    dir_freqs: int = 4
    skip_layer: int = 5
    # world -> normalized coordinates before encoding: (p - center) / scale
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    @property
    def pos_dim(self) -> int:
        return 3 + 6 * self.pos_freqs

    @property
    def dir_dim(self) -> int:
        return 3 + 6 * self.dir_freqs


@dataclass
class FieldParams:
    config: FieldConfig
    weights: dict[str, np.ndarray]
    raw_uncertainty: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def uncertainty(self) -> np.ndarray:
        return np.maximum(self.raw_uncertainty, 0.0)

    @property
    def confidences(self) -> np.ndarray:
        return np.exp(-self.uncertainty)

    def confidence(self, n: int) -> float:
        if not 0 <= n < len(self.raw_uncertainty):
            raise IndexError(f"unknown frame index {n} (have {len(self.raw_uncertainty)} frames)")
        return float(np.exp(-max(self.raw_uncertainty[n], 0.0)))

    def copy(self) -> "FieldParams":
        return FieldParams(
            self.config,
            {k: v.copy() for k, v in self.weights.items()},
            self.raw_uncertainty.copy(),
        )


def positional_encode(p, L: int) -> np.ndarray:
    """[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(2^(L-1) pi p)].

    Works on any array whose last axis has length 3.
    """
    p = np.asarray(p, dtype=np.float64)
    parts = [p]
    for k in range(L):
        arg = (2.0**k) * np.pi * p
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def _layer_shapes(cfg: FieldConfig) -> list[tuple[str, int, int]]:
    shapes = []
    fan_in = cfg.pos_dim
    for i in range(cfg.trunk_depth):
        if i == cfg.skip_layer and i > 0:
            fan_in += cfg.pos_dim
        shapes.append((f"trunk.{i}", fan_in, cfg.trunk_width))
        fan_in = cfg.trunk_width
    shapes.append(("sigma", cfg.trunk_width, 1))
    shapes.append(("feature", cfg.trunk_width, cfg.trunk_width))
    for head, extra in (("color", cfg.dir_dim), ("mv", 0)):
        fan_in = cfg.trunk_width + extra
        for i in range(cfg.head_depth):
            shapes.append((f"{head}.{i}", fan_in, cfg.head_width))
            fan_in = cfg.head_width
        shapes.append((f"{head}.out", fan_in, 3))
    return shapes


def init_field(cfg: FieldConfig, n_frames: int, rng: np.random.Generator,
               raw_uncertainty: np.ndarray | None = None) -> FieldParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; uncertainties start at 0."""
    weights: dict[str, np.ndarray] = {}
    for name, fan_in, fan_out in _layer_shapes(cfg):
        bound = 1.0 / np.sqrt(fan_in)
        weights[f"{name}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights[f"{name}.b"] = rng.uniform(-bound, bound, size=(fan_out,))
    raw = np.zeros(n_frames) if raw_uncertainty is None else np.array(raw_uncertainty, dtype=np.float64)
    return FieldParams(cfg, weights, raw)


def _linear(x: Tensor, w: dict[str, Tensor], name: str) -> Tensor:
    return x @ w[f"{name}.w"] + w[f"{name}.b"]


def encode_inputs(cfg: FieldConfig, x: np.ndarray, d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xn = (np.asarray(x, dtype=np.float64) - np.asarray(cfg.center)) / cfg.scale
    return positional_encode(xn, cfg.pos_freqs), positional_encode(d, cfg.dir_freqs)


def field_forward(cfg: FieldConfig, w: dict[str, Tensor], pos_enc: np.ndarray,
                  dir_enc: np.ndarray, samples_per_dir: int = 1):
    """Differentiable evaluation on P = R * samples_per_dir points.

    ``pos_enc`` is (P, pos_dim); ``dir_enc`` is (R, dir_dim), shared by the
    ``samples_per_dir`` consecutive points of each ray. Returns Tensors
    sigma (P,), color (P, 3), color_mv (P, 3).
    """
    pos = Tensor(pos_enc)
    h = pos
    for i in range(cfg.trunk_depth):
        if i == cfg.skip_layer and i > 0:
            h = ad.concat([h, pos], axis=-1)
        h = ad.relu(_linear(h, w, f"trunk.{i}"))
    sigma = ad.softplus(_linear(h, w, "sigma")).reshape(-1)
    feature = _linear(h, w, "feature")

    # first color layer: feature and direction parts of the weight applied separately
    wc = w["color.0.w"]
    wf = wc[: cfg.trunk_width]
    wd = wc[cfg.trunk_width:]
    dir_term = Tensor(dir_enc) @ wd + w["color.0.b"]
    fh = feature @ wf
    n_rays = dir_enc.shape[0]
    hc = (fh.reshape(n_rays, samples_per_dir, -1) + dir_term.reshape(n_rays, 1, -1)).reshape(
        n_rays * samples_per_dir, -1
    )
    hc = ad.relu(hc)
    for i in range(1, cfg.head_depth):
        hc = ad.relu(_linear(hc, w, f"color.{i}"))
    color = ad.sigmoid(_linear(hc, w, "color.out"))

    hm = ad.stop_gradient(feature)
    for i in range(cfg.head_depth):
        hm = ad.relu(_linear(hm, w, f"mv.{i}"))
    color_mv = ad.sigmoid(_linear(hm, w, "mv.out"))
    return sigma, color, color_mv


def as_tensors(params: FieldParams, requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.weights.items()}


def query_field(params: FieldParams, x, d):
    """Evaluate the field at points ``x`` (..., 3) seen along unit directions ``d``.

    Returns numpy arrays (sigma, color, color_mv).
    """
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    lead = x.shape[:-1]
    x2 = x.reshape(-1, 3)
    d2 = np.broadcast_to(d, x.shape).reshape(-1, 3)
    pos_enc, dir_enc = encode_inputs(params.config, x2, d2)
    sigma, c, c_mv = field_forward(params.config, as_tensors(params, False), pos_enc, dir_enc)
    return sigma.data.reshape(lead), c.data.reshape(lead + (3,)), c_mv.data.reshape(lead + (3,))


def confidence(params: FieldParams, n: int) -> float:
    return params.confidence(n)


# ----------------------------------------------------------------- checkpoints


def save_field(params: FieldParams, path, extra: dict | None = None) -> None:
    """Write a versioned .npz checkpoint (float64 arrays + JSON header)."""
    cfg = asdict(params.config)
    header = {"version": CHECKPOINT_VERSION, "config": cfg, "extra": extra or {}}
    arrays = {f"w/{k}": v for k, v in params.weights.items()}
    arrays["raw_uncertainty"] = params.raw_uncertainty
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    # hand-rolled npz: np.savez stamps the wall-clock time into the archive
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_field(path) -> tuple[FieldParams, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        cfg = header["config"]
        cfg["center"] = tuple(cfg["center"])
        weights = {k[2:]: z[k].copy() for k in z.files if k.startswith("w/")}
        raw = z["raw_uncertainty"].copy()
    return FieldParams(FieldConfig(**cfg), weights, raw), header.get("extra", {})
