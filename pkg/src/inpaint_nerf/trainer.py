"""Iterative refinement with confidence-based view selection.

Outer loop: re-initialize the field, train it for ``k_grad`` steps on all
unmasked pixels plus the masked (inpainted) pixels of the active set, then
drop every active frame whose confidence falls below the median. The
per-frame uncertainties are created once and persist across outer
iterations, together with their Adam moments; the field and its Adam
moments start fresh each time.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .camera import backproject, generate_rays
from .field import FieldConfig, FieldParams, as_tensors, init_field, save_field
from .objective import COMPONENTS, ActiveSet, LossWeights, PixelBatch, objective
from .render import SceneBounds, mlp_field, near_far, render_rays
from .scene import SceneDataset

log = logging.getLogger(__name__)

VIEW_MODES = ("select", "all", "tenth", "fiftieth", "single")


class DivergenceError(RuntimeError):
    def __init__(self, message: str, components: list[str], checkpoint: str | None = None):
        super().__init__(message)
        self.components = components
        self.checkpoint = checkpoint


class TrainError(ValueError):
    pass


@dataclass
class TrainConfig:
    k_grad: int = 50_000
    k_outer: int = 4
    lr0: float = 5e-4
    lr_final_ratio: float = 0.1
    warmup_steps: int = 500
    # step size for the per-frame uncertainties; None means lr0
    lr_uncertainty: float | None = None
    batch_size: int = 1024
    n_samples: int = 64
    masked_fraction: float = 0.5
    # "mean": batch average; "sum": stratum-rescaled sum estimating full-image sums
    loss_normalization: str = "mean"
    lambda_rgb: float = 1.0
    lambda_depth: float = 1.0
    lambda_reg: float = 0.005
    lambda_dist: float = 1.0
    trunk_depth: int = 8
    trunk_width: int = 256
    head_depth: int = 4
    head_width: int = 128
    pos_freqs: int = 10
    dir_freqs: int = 4
    skip_layer: int = 5
    # "select": learned confidences + median pruning; others train once on a fixed set
    views: str = "select"
    seed: int = 0
    log_every: int = 25
    bounds_inflate: float = 0.1

    def __post_init__(self):
        if self.k_grad < 1 or self.k_outer < 1:
            raise TrainError("k_grad and k_outer must be >= 1")
        if self.lr0 <= 0 or (self.lr_uncertainty is not None and self.lr_uncertainty <= 0):
            raise TrainError("learning rates must be positive")
        if self.batch_size < 1 or self.n_samples < 1:
            raise TrainError("batch_size and n_samples must be >= 1")
        if not 0.0 <= self.masked_fraction <= 1.0:
            raise TrainError("masked_fraction must lie in [0, 1]")
        if self.loss_normalization not in ("mean", "sum"):
            raise TrainError(f"unknown loss_normalization {self.loss_normalization!r}")
        if self.views not in VIEW_MODES:
            raise TrainError(f"views must be one of {VIEW_MODES}, got {self.views!r}")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_rgb, self.lambda_depth, self.lambda_reg, self.lambda_dist)

    def field_config(self, bounds: SceneBounds) -> FieldConfig:
        return FieldConfig(self.trunk_depth, self.trunk_width, self.head_depth, self.head_width,
                           self.pos_freqs, self.dir_freqs, self.skip_layer,
                           tuple(bounds.center.tolist()), bounds.radius)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        preset = data.pop("preset", None)
        if preset and preset not in PRESETS:
            raise TrainError(f"unknown preset {preset!r}")
        base = dict(PRESETS[preset]) if preset else {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in data.items():
            if key not in types:
                raise TrainError(f"unknown config key {key!r}")
            base[key] = _coerce(key, value, types[key])
        return cls(**base)


# Small enough for one CPU core: ~0.1 s per step at 128 rays x 32 samples.
PRESETS: dict[str, dict] = {
    "full": {},
    "desk": {
        "k_grad": 3000,
        "lr0": 2e-3,
        "warmup_steps": 100,
        "lr_uncertainty": 1e-2,
        "batch_size": 128,
        "n_samples": 32,
        "trunk_depth": 4,
        "trunk_width": 64,
        "head_depth": 2,
        "head_width": 32,
        "pos_freqs": 6,
        "dir_freqs": 2,
        "skip_layer": 2,
    },
}


def _coerce(key: str, value, typ: str):
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("none", "null", ""):
            return None
        if "int" in typ and "float" not in typ:
            return int(text.replace("_", ""))
        if "float" in typ:
            return float(text)
        return text
    if "float" in typ and isinstance(value, int):
        return float(value)
    return value


def parse_config_text(text: str) -> TrainConfig:
    """``key = value`` lines (``#`` comments) or a JSON object."""
    if text.lstrip().startswith("{"):
        return TrainConfig.from_mapping(json.loads(text))
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrainError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        data[k.strip()] = v.strip()
    return TrainConfig.from_mapping(data)


def load_config(path) -> TrainConfig:
    return parse_config_text(Path(path).read_text())


# ----------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, where: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new arrays, updates ``state`` in place.

    ``where`` optionally restricts the update (moments included) to a boolean
    subset of each parameter's entries; the rest stay frozen.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m, v = np.zeros_like(p), np.zeros_like(p)
        m_new = b1 * m + (1.0 - b1) * g
        v_new = b2 * v + (1.0 - b2) * g * g
        step = lr * (m_new / c1) / (np.sqrt(v_new / c2) + state.eps)
        mask = None if where is None else where.get(k)
        if mask is None:
            state.m[k], state.v[k] = m_new, v_new
            out[k] = p - step
        else:
            state.m[k] = np.where(mask, m_new, m)
            state.v[k] = np.where(mask, v_new, v)
            out[k] = np.where(mask, p - step, p)
    return out


def lr_schedule(step: int, total_steps: int, lr0: float, final_ratio: float = 0.1,
                warmup_steps: int = 500) -> float:
    """Exponential decay from lr0 to final_ratio * lr0, with a linear warmup factor."""
    if total_steps <= 0:
        return lr0
    frac = min(max(step / total_steps, 0.0), 1.0)
    decay = lr0 * final_ratio ** frac
    if warmup_steps > 0:
        decay *= min(1.0, (step + 1) / warmup_steps)
    return decay


# ------------------------------------------------------------------- pruning


def interpolated_median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


def prune_active_set(conf: dict[int, float], active: ActiveSet) -> tuple[ActiveSet, float]:
    """Drop active frames whose confidence is strictly below the median; returns (new set, median)."""
    members = active.sorted()
    if not members:
        raise TrainError("cannot prune an empty active set")
    vals = np.array([conf[n] for n in members])
    m = interpolated_median(vals)
    keep = [n for n, c in zip(members, vals) if not c < m]
    if not keep:
        best = members[int(np.argmax(vals))]
        log.warning("pruning would empty the active set; keeping frame %d", best)
        keep = [best]
    return ActiveSet(set(keep)), m


def ablation_subset(mode: str, pool: list[int]) -> list[int]:
    """Fixed view sets for the selection ablation, taken by stride over ``pool``."""
    pool = sorted(pool)
    if mode in ("all", "select"):
        return pool
    if not pool:
        return []
    if mode == "tenth":
        return pool[::10]
    if mode == "fiftieth":
        return pool[::50]
    if mode == "single":
        return [pool[len(pool) // 2]]
    raise TrainError(f"unknown view mode {mode!r}")


# ------------------------------------------------------------------ ray pool


class RayPool:
    """Every training pixel as a ray with its captured and inpainted targets."""

    def __init__(self, ds: SceneDataset, frames: list[int], bounds: SceneBounds):
        h, w = ds.resolution
        rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rows, cols = rows.reshape(-1), cols.reshape(-1)
        parts = {k: [] for k in ("frame", "masked", "origins", "dirs", "near", "far", "rgb", "depth",
                                 "in_rgb", "in_depth")}
        for n in frames:
            f = ds.frames[n]
            o, d, zscale = generate_rays(ds.intrinsics, f.pose, rows, cols)
            near, far = near_far(bounds, o, d)
            masked = f.mask.reshape(-1)
            parts["frame"].append(np.full(rows.size, n, dtype=np.int64))
            parts["masked"].append(masked)
            parts["origins"].append(o)
            parts["dirs"].append(d)
            parts["near"].append(near)
            parts["far"].append(far)
            parts["rgb"].append(f.rgb.reshape(-1, 3))
            parts["depth"].append(f.depth.reshape(-1) / zscale)
            if masked.any():
                if f.inpaint_rgb is None or f.inpaint_depth is None:
                    raise TrainError(f"frame {n} has a mask but no inpainted color/depth")
                parts["in_rgb"].append(f.inpaint_rgb.reshape(-1, 3))
                parts["in_depth"].append(f.inpaint_depth.reshape(-1) / zscale)
            else:
                parts["in_rgb"].append(parts["rgb"][-1])
                parts["in_depth"].append(parts["depth"][-1])
        cat = {k: np.concatenate(v) for k, v in parts.items()}
        self.frame = cat["frame"]
        self.masked = cat["masked"]
        self.origins, self.dirs = cat["origins"], cat["dirs"]
        self.near, self.far = cat["near"], cat["far"]
        m = self.masked
        self.target_rgb = np.where(m[:, None], cat["in_rgb"], cat["rgb"])
        self.target_depth = np.where(m, cat["in_depth"], cat["depth"])
        self.unmasked_idx = np.flatnonzero(~m)
        self.n_frames = int(self.frame.max()) + 1 if self.frame.size else 0

    def masked_indices(self, active: ActiveSet) -> np.ndarray:
        ok = self.masked & active.indicator(max(self.n_frames, max(active.members, default=-1) + 1))[self.frame]
        return np.flatnonzero(ok)

    def batch(self, idx: np.ndarray, weight: np.ndarray) -> PixelBatch:
        depth = self.target_depth[idx]
        return PixelBatch(
            frame=self.frame[idx], masked=self.masked[idx], target_rgb=self.target_rgb[idx],
            target_depth=depth, depth_valid=depth > 0, weight=weight,
            origins=self.origins[idx], dirs=self.dirs[idx], near=self.near[idx], far=self.far[idx],
        )

    def sample(self, rng: np.random.Generator, masked_idx: np.ndarray, batch_size: int,
               masked_fraction: float, normalization: str) -> PixelBatch:
        """Uniform draws from the unmasked pool and the active masked pool."""
        n_m = int(round(masked_fraction * batch_size)) if masked_idx.size else 0
        n_u = batch_size - n_m
        if self.unmasked_idx.size == 0:
            n_u, n_m = 0, batch_size
        idx_u = self.unmasked_idx[rng.integers(0, self.unmasked_idx.size, n_u)] if n_u else np.zeros(0, np.int64)
        idx_m = masked_idx[rng.integers(0, masked_idx.size, n_m)] if n_m else np.zeros(0, np.int64)
        idx = np.concatenate([idx_u, idx_m])
        if normalization == "sum":
            weight = np.concatenate([np.full(n_u, self.unmasked_idx.size / max(n_u, 1)),
                                     np.full(n_m, masked_idx.size / max(n_m, 1))])
        else:
            weight = np.full(idx.size, 1.0 / idx.size)
        return self.batch(idx, weight)


def scene_bounds(ds: SceneDataset, frames: list[int], inflate: float = 0.1, stride: int = 2) -> SceneBounds:
    """Axis-aligned box around the back-projected depth of ``frames`` and their cameras."""
    pts = [backproject(ds.intrinsics, ds.frames[n].pose, ds.frames[n].depth, stride) for n in frames]
    pts.append(np.stack([ds.frames[n].pose[:3, 3] for n in frames]))
    return SceneBounds.from_points(np.concatenate(pts), inflate=inflate)


# -------------------------------------------------------------------- result


@dataclass
class TrainResult:
    params: FieldParams
    active: ActiveSet
    bounds: SceneBounds
    history: list[dict]
    log_rows: list[dict]
    config: TrainConfig

    def confidences(self, frames=None) -> dict[int, float]:
        c = self.params.confidences
        idx = range(len(c)) if frames is None else frames
        return {int(n): float(c[n]) for n in idx}

    def summary(self) -> dict:
        return {
            "active": self.active.sorted(),
            "confidences": {str(k): v for k, v in self.confidences().items()},
            "history": self.history,
            "bounds": self.bounds.to_dict(),
            "config": self.config.to_dict(),
        }


LOG_FIELDS = ["outer", "step", "lr"] + list(COMPONENTS) + ["total", "n_active", "conf_min", "conf_median", "conf_max"]


def log_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def _frame_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def run(config: TrainConfig, ds: SceneDataset, out_dir=None,
        progress: Callable[[dict], None] | None = None) -> TrainResult:
    """Train with view selection (or a fixed view set) and return the final field."""
    if len(ds) == 0:
        raise TrainError("empty dataset")
    ds.validate()
    train = ds.train_indices
    if not train:
        raise TrainError("no training frames")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    bounds = scene_bounds(ds, train, config.bounds_inflate)
    pool = RayPool(ds, train, bounds)
    fcfg = config.field_config(bounds)
    weights = config.loss_weights
    selecting = config.views == "select"
    active = ActiveSet(set(ablation_subset(config.views, train)))
    k_outer = config.k_outer if selecting else 1
    if not selecting and config.k_outer > 1:
        log.info("fixed view set %r: training once, k_outer ignored", config.views)
    lr_u = config.lr_uncertainty if config.lr_uncertainty is not None else config.lr0

    raw_u = np.zeros(len(ds))
    adam_u = AdamState()
    history: list[dict] = []
    rows: list[dict] = []
    params = None
    step_global = 0
    for outer in range(k_outer):
        params = init_field(fcfg, len(ds), _frame_rng(config.seed, outer, 1), raw_uncertainty=raw_u)
        adam_theta = AdamState()
        rng = _frame_rng(config.seed, outer, 2)
        masked_idx = pool.masked_indices(active)
        u_mask = active.indicator(len(ds))
        for step in range(config.k_grad):
            batch = pool.sample(rng, masked_idx, config.batch_size, config.masked_fraction,
                                config.loss_normalization)
            batch.jitter = rng.random((len(batch), config.n_samples))
            w_t = as_tensors(params)
            u_t = ad.tensor(params.raw_uncertainty, requires_grad=selecting, name="raw_uncertainty")
            rendered = render_rays(mlp_field(params, w_t), batch.origins, batch.dirs, batch.near, batch.far,
                                   batch.jitter, detach_color=batch.masked)
            parts = objective(batch, rendered, u_t, active, weights, use_confidence=selecting)
            leaves = list(w_t.values()) + ([u_t] if selecting else [])
            grads = ad.backward(parts["total"], wrt=leaves)
            _check_finite(parts, grads, params, out, outer, step_global, active, history)

            lr = lr_schedule(step, config.k_grad, config.lr0, config.lr_final_ratio, config.warmup_steps)
            params.weights = adam_step(params.weights, {k: grads[t] for k, t in w_t.items()}, adam_theta, lr)
            if selecting:
                lr_step_u = lr_schedule(step, config.k_grad, lr_u, config.lr_final_ratio, config.warmup_steps)
                new = adam_step({"u": params.raw_uncertainty}, {"u": grads[u_t]}, adam_u, lr_step_u,
                                where={"u": u_mask})
                params.raw_uncertainty = np.maximum(new["u"], 0.0)

            step_global += 1
            if step % config.log_every == 0 or step == config.k_grad - 1:
                row = _log_row(outer, step_global, lr, parts, params, active)
                rows.append(row)
                if progress is not None:
                    progress(row)

        raw_u = params.raw_uncertainty
        conf = {n: float(math.exp(-raw_u[n])) for n in active}
        entry = {"outer": outer, "step": step_global, "active_before": active.sorted(),
                 "confidences": {str(n): c for n, c in sorted(conf.items())}}
        if selecting:
            active, m = prune_active_set(conf, active)
            entry["median"] = m
        entry["active_after"] = active.sorted()
        history.append(entry)
        log.info("outer %d: |P| %d -> %d", outer, len(entry["active_before"]), len(active))
        if out is not None:
            save_field(params, out / "checkpoints" / f"outer_{outer:02d}.npz",
                       extra={"outer": outer, "step": step_global, "active": active.sorted(),
                              "bounds": bounds.to_dict(),
                              "n_samples": config.n_samples})

    result = TrainResult(params, active, bounds, history, rows, config)
    if out is not None:
        save_field(params, out / "final.npz", extra={"active": active.sorted(), "bounds": bounds.to_dict(),
                                                     "n_samples": config.n_samples})
        (out / "log.csv").write_text(log_csv(rows))
        (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True))
    return result


def _log_row(outer, step, lr, parts, params, active) -> dict:
    conf = params.confidences[active.sorted()] if len(active) else np.array([np.nan])
    row = {"outer": outer, "step": step, "lr": lr}
    for k in list(COMPONENTS) + ["total"]:
        row[k] = float(parts[k].data)
    row.update(n_active=len(active), conf_min=float(conf.min()), conf_median=float(np.median(conf)),
               conf_max=float(conf.max()))
    return row


def _check_finite(parts, grads, params, out, outer, step, active, history) -> None:
    bad = [k for k in list(COMPONENTS) + ["total"] if not np.isfinite(parts[k].data).all()]
    if not bad and all(np.isfinite(g).all() for g in grads.values()):
        return
    if not bad:
        bad = ["gradient"]
    path = None
    if out is not None:
        path = str(out / "checkpoints" / "diverged.npz")
        save_field(params, path, extra={"outer": outer, "step": step, "active": active.sorted(),
                                        "diverged": bad, "history": history})
    raise DivergenceError(f"non-finite loss at outer {outer}, step {step}: {', '.join(bad)}", bad, path)
