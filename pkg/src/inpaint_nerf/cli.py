"""Command-line client for the service.

Each subcommand builds a request, sends it to ``--server`` (or to an
in-process app when no server is given) and prints the JSON response.
Exit status is 0 on success, 1 when the service reports an error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

SERVER_ENV = "INPAINT_NERF_SERVER"


def _abs(p: str | None) -> str | None:
    return None if p is None else str(Path(p).resolve())


def _pairs(items: list[str] | None) -> dict:
    """``key=value`` items; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


def _frames(text: str | None) -> list[int] | None:
    if text is None:
        return None
    return [int(x) for x in text.split(",") if x.strip()]


class Client:
    def __init__(self, server: str | None, timeout: float | None = None):
        if server:
            import httpx

            self._http = httpx.Client(base_url=server, timeout=timeout)
        else:
            import warnings

            with warnings.catch_warnings():
                # starlette nags about its httpx backend on import
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
            from .service.app import create_app

            self._http = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> tuple[int, dict]:
        r = self._http.post(path, json=payload)
        try:
            body = r.json()
        except ValueError:
            body = {"error": r.text}
        return r.status_code, body


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inpaint-nerf", description=__doc__.splitlines()[0])
    p.add_argument("--server", default=os.environ.get(SERVER_ENV),
                   help=f"service URL (default ${SERVER_ENV}; in-process when unset)")
    p.add_argument("--timeout", type=float, default=None, help="HTTP timeout in seconds (remote only)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-synthetic", help="render a synthetic room scene to a scene directory")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int, help="number of frames")
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--corrupt-fraction", type=float, help="fraction of frames with corrupted inpaintings")
    s.add_argument("--no-object", action="store_true", help="render the room without the object")
    s.add_argument("--no-inpaint", action="store_true", help="skip the built-in inpainting")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other scene parameter")
    s.add_argument("--depth-format", choices=["pfm", "png"], default="pfm")

    s = sub.add_parser("refine-masks", help="recompute masks from the 3D box and close small gaps")
    s.add_argument("--scene", required=True)
    s.add_argument("--depth-tolerance", type=float, default=0.05)
    s.add_argument("--dilate", type=int, default=2)
    s.add_argument("--erode", type=int, default=2)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--visibility", choices=["consistent", "front"], default="consistent")
    s.add_argument("--box", help="JSON file overriding the scene's box.json")
    s.add_argument("--out", help="write the updated scene here instead of in place")

    s = sub.add_parser("inpaint", help="fill masked color and depth of every frame")
    s.add_argument("--scene", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--cmd", "--command", dest="inpaint_command",
                   help="external inpainter, e.g. 'lama {image} {mask} {out}'")
    g.add_argument("--builtin", action="store_true", help="built-in diffusion fill (the default)")
    s.add_argument("--inpaint-timeout", type=float, default=300.0)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("train", help="train with confidence-based view selection")
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="key=value or JSON config file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")

    s = sub.add_parser("render", help="render frames from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", help="comma-separated frame indices (default all)")
    s.add_argument("--head", choices=["mv", "view"], default="mv")
    s.add_argument("--samples", type=int)
    s.add_argument("--depth-format", choices=["pfm", "png"], default="pfm")

    s = sub.add_parser("eval", help="masked PSNR / SSIM / depth errors on held-out frames")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", help="directory for eval.json and eval.csv")
    s.add_argument("--frames", help="comma-separated frame indices (default test split)")
    s.add_argument("--region", choices=["mask", "unmasked", "full"], default="mask")
    s.add_argument("--samples", type=int)

    s = sub.add_parser("serve", help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    return p


def request_for(args) -> tuple[str, dict]:
    c = args.command
    if c == "make-synthetic":
        spec = _pairs(args.set)
        for key, val in (("n_frames", args.frames), ("height", args.height), ("width", args.width),
                         ("corrupt_fraction", args.corrupt_fraction)):
            if val is not None:
                spec[key] = val
        if args.no_object:
            spec["with_object"] = False
        if args.no_inpaint:
            spec["inpaint"] = False
        return "/make-synthetic", {"out": _abs(args.out), "seed": args.seed, "spec": spec,
                                   "depth_format": args.depth_format}
    if c == "refine-masks":
        box = json.loads(Path(args.box).read_text()) if args.box else None
        return "/refine-masks", {"scene": _abs(args.scene), "depth_tolerance": args.depth_tolerance,
                                 "dilate_radius": args.dilate, "erode_radius": args.erode, "stride": args.stride,
                                 "visibility": args.visibility, "box": box, "out": _abs(args.out)}
    if c == "inpaint":
        return "/inpaint", {"scene": _abs(args.scene), "command": args.inpaint_command,
                            "timeout": args.inpaint_timeout, "workers": args.workers}
    if c == "train":
        text = Path(args.config).read_text() if args.config else None
        return "/train", {"scene": _abs(args.scene), "out": _abs(args.out), "config_text": text,
                          "config": _pairs(args.set)}
    if c == "render":
        return "/render", {"checkpoint": _abs(args.checkpoint), "scene": _abs(args.scene), "out": _abs(args.out),
                           "frames": _frames(args.frames), "head": args.head, "n_samples": args.samples,
                           "depth_format": args.depth_format}
    if c == "eval":
        return "/eval", {"checkpoint": _abs(args.checkpoint), "scene": _abs(args.scene), "out": _abs(args.out),
                         "frames": _frames(args.frames), "region": args.region, "n_samples": args.samples}
    raise SystemExit(f"unknown command {c!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        uvicorn.run("inpaint_nerf.service.app:app", host=args.host, port=args.port)
        return 0
    path, payload = request_for(args)
    status, body = Client(args.server, args.timeout).post(path, payload)
    json.dump(body, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0 if status < 400 else 1


if __name__ == "__main__":
    sys.exit(main())
