"""HTTP front end: one POST endpoint per pipeline stage.

Every request names directories on the server's filesystem; responses are
JSON summaries. Requests run synchronously, so ``/train`` returns only when
training has finished.
"""

from __future__ import annotations

import logging
import math
import shutil
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..evaluation import evaluate
from ..field import load_field
from ..inpaint import InpaintError, external_inpainter, inpaint_builtin, inpaint_dataset
from ..maskgen import MaskParams, box_filter, backproject_cloud, masks_from_box
from ..objective import ContractError
from ..render import SceneBounds, render_frame
from ..scene import BBox3, SceneError, load_scene, save_scene, write_depth, write_rgb
from ..synthetic import SyntheticSpec, SyntheticSpecError, make_synthetic
from ..trainer import DivergenceError, TrainConfig, TrainError, parse_config_text, run
from . import schemas

log = logging.getLogger(__name__)


def _depth_format(ds_root: Path) -> str:
    return "png" if any((ds_root / "depth").glob("*.png")) else "pfm"


def _load_checkpoint(path: str):
    params, extra = load_field(path)
    if "bounds" not in extra:
        raise SceneError([f"{path}: checkpoint has no scene bounds"])
    return params, SceneBounds.from_dict(extra["bounds"]), extra


def create_app() -> FastAPI:
    app = FastAPI(title="inpaint-nerf", version=__version__)

    @app.exception_handler(SceneError)
    async def scene_error(_: Request, exc: SceneError):
        return JSONResponse(status_code=422, content={"error": "invalid scene", "detail": exc.problems})

    @app.exception_handler(DivergenceError)
    async def divergence(_: Request, exc: DivergenceError):
        detail = [f"components: {', '.join(exc.components)}"]
        if exc.checkpoint:
            detail.append(f"checkpoint: {exc.checkpoint}")
        return JSONResponse(status_code=500, content={"error": str(exc), "detail": detail})

    for err in (TrainError, SyntheticSpecError, ContractError, InpaintError, FileNotFoundError, ValueError):
        @app.exception_handler(err)
        async def bad_request(_: Request, exc: Exception):
            return JSONResponse(status_code=400, content={"error": str(exc), "detail": []})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/make-synthetic", response_model=schemas.MakeSyntheticResponse)
    def make_synthetic_scene(req: schemas.MakeSyntheticRequest):
        spec = SyntheticSpec.from_dict(req.spec)
        unknown = sorted(set(req.spec) - set(SyntheticSpec.__dataclass_fields__))
        if unknown:
            raise SyntheticSpecError(f"unknown spec keys {unknown}")
        ds, truth = make_synthetic(spec, seed=req.seed)
        save_scene(ds, req.out, depth_format=req.depth_format)
        h, w = ds.resolution
        return schemas.MakeSyntheticResponse(scene=str(req.out), n_frames=len(ds), height=h, width=w,
                                             train=ds.train_indices, test=ds.test_indices,
                                             corrupted=truth.corrupted)

    @app.post("/refine-masks", response_model=schemas.RefineMasksResponse)
    def refine_masks(req: schemas.RefineMasksRequest):
        root = Path(req.scene)
        ds = load_scene(root, require_masks=False)
        box = BBox3.from_json(req.box) if req.box is not None else ds.box
        if box is None:
            raise SceneError([f"{root}: no box.json and no box in the request"])
        params = MaskParams(req.depth_tolerance, req.dilate_radius, req.erode_radius, req.stride, req.visibility)
        fallback = len(box_filter(backproject_cloud(ds, params.stride), box)) == 0
        masks = masks_from_box(ds, box, params)
        cleared = False
        for f, m in zip(ds.frames, masks):
            f.mask = m
            if f.inpaint_rgb is not None or f.inpaint_depth is not None:
                cleared = True
            # old inpaintings were made for the old masks
            f.inpaint_rgb = f.inpaint_depth = None
        ds.box = box
        target = Path(req.out) if req.out else root
        for sub in ("inpaint_rgb", "inpaint_depth"):
            if (target / sub).is_dir():
                shutil.rmtree(target / sub)
        save_scene(ds, target, depth_format=_depth_format(root))
        return schemas.RefineMasksResponse(scene=str(target), mask_pixels=[int(m.sum()) for m in masks],
                                           fallback=fallback, cleared_inpaintings=cleared)

    @app.post("/inpaint", response_model=schemas.InpaintResponse)
    def inpaint(req: schemas.InpaintRequest):
        root = Path(req.scene)
        ds = load_scene(root)
        inpainter = external_inpainter(req.command, req.timeout) if req.command else inpaint_builtin
        inpaint_dataset(ds, inpainter, workers=req.workers)
        save_scene(ds, root, depth_format=_depth_format(root))
        return schemas.InpaintResponse(scene=str(root), frames=len(ds),
                                       inpainter=req.command or "builtin")

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        ds = load_scene(req.scene)
        base = parse_config_text(req.config_text).to_dict() if req.config_text else {}
        cfg = TrainConfig.from_mapping({**base, **req.config})
        result = run(cfg, ds, out_dir=req.out)
        s = result.summary()
        steps = result.log_rows[-1]["step"] if result.log_rows else 0
        return schemas.TrainResponse(out=str(req.out), checkpoint=str(Path(req.out) / "final.npz"),
                                     active=s["active"], confidences=s["confidences"], history=s["history"],
                                     steps=steps)

    @app.post("/render", response_model=schemas.RenderResponse)
    def render(req: schemas.RenderRequest):
        ds = load_scene(req.scene, require_masks=False)
        params, bounds, extra = _load_checkpoint(req.checkpoint)
        n_samples = req.n_samples or extra.get("n_samples", 64)
        frames = req.frames if req.frames is not None else list(range(len(ds)))
        out = Path(req.out)
        (out / "rgb").mkdir(parents=True, exist_ok=True)
        (out / "depth").mkdir(parents=True, exist_ok=True)
        rgb_files, depth_files = [], []
        h, w = ds.resolution
        for n in frames:
            if not 0 <= n < len(ds):
                raise ValueError(f"frame {n} out of range (scene has {len(ds)})")
            rgb, depth = render_frame(params, ds.intrinsics, ds.frames[n].pose, h, w, bounds,
                                      n_samples=n_samples, head=req.head)
            rp = out / "rgb" / f"{n:05d}.png"
            dp = out / "depth" / f"{n:05d}.{req.depth_format}"
            write_rgb(rp, rgb)
            write_depth(dp, depth)
            rgb_files.append(str(rp))
            depth_files.append(str(dp))
        return schemas.RenderResponse(out=str(out), rgb=rgb_files, depth=depth_files)

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_(req: schemas.EvalRequest):
        ds = load_scene(req.scene, require_masks=False)
        params, bounds, extra = _load_checkpoint(req.checkpoint)
        n_samples = req.n_samples or extra.get("n_samples", 64)
        report = evaluate(params, ds, bounds, frames=req.frames, n_samples=n_samples, region=req.region)
        if req.out:
            report.write(req.out)
        d = report.to_dict()
        d["scene"] = {k: (None if math.isnan(v) else v) for k, v in d["scene"].items()}
        return schemas.EvalResponse(**d)

    return app


app = create_app()
