"""HTTP slice service backing the interactive viewer.

Endpoints:
  GET /info                 -> {n_gaussians, world_bounds_mm, default_spec}
  GET /slice?rx=&ry=&rz=&tx=&ty=&tz=&w=&h=&spacing=&fmt=pgm|f32
  GET /gt_slice?...         -> same grammar, served from the ground-truth
                               volume when one was loaded

Rotations are degrees (ZYX intrinsic), translations mm.  The checkpoint is
loaded once and never mutated; concurrent requests render into private
buffers, so the threading server needs no locks.
"""

from __future__ import annotations

import json
import os
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from .cli import pgm_bytes
from .geometry import InvalidParameterError, ProbePose, SliceSpec
from .rasterizer import render_slice
from .trainer import load_checkpoint
from .volume import load_volume, sample_slice

DEFAULT_PORT = 8472


class ServeState:
    """Read-only shared state: checkpoint, optional volume, defaults."""

    def __init__(self, checkpoint_path, volume_path=None, workers=1):
        self.ready = False
        self.cloud, self.meta = load_checkpoint(checkpoint_path)
        self.volume = load_volume(volume_path) if volume_path else None
        self.workers = workers
        self.default_spec = {"width": 160, "height": 160, "spacing": 0.6}
        if self.cloud.n:
            lo = self.cloud.means.min(axis=0).astype(float)
            hi = self.cloud.means.max(axis=0).astype(float)
        else:
            lo = hi = np.zeros(3)
        if self.volume is not None:
            b = self.volume.world_bounds()
            lo, hi = b[0], b[1]
        self.world_bounds_mm = [list(map(float, lo)), list(map(float, hi))]
        self.ready = True

    def info(self) -> dict:
        return {"n_gaussians": int(self.cloud.n),
                "world_bounds_mm": self.world_bounds_mm,
                "default_spec": self.default_spec}


def _parse_slice_query(query: dict, defaults: dict) -> tuple:
    def get(name, cast, default):
        if name not in query:
            return default
        try:
            return cast(query[name][0])
        except ValueError as e:
            raise InvalidParameterError(f"bad value for {name!r}") from e

    pose = ProbePose.from_euler_deg(
        get("rx", float, 0.0), get("ry", float, 0.0), get("rz", float, 0.0),
        get("tx", float, 0.0), get("ty", float, 0.0), get("tz", float, 0.0))
    spec = SliceSpec(width=get("w", int, defaults["width"]),
                     height=get("h", int, defaults["height"]),
                     spacing=get("spacing", float, defaults["spacing"]),
                     pose=pose)
    fmt = get("fmt", str, "pgm")
    if fmt not in ("pgm", "f32"):
        raise InvalidParameterError("fmt must be pgm or f32")
    return spec, fmt


def _encode(pixels: np.ndarray, fmt: str) -> tuple:
    if fmt == "pgm":
        return pgm_bytes(pixels), "image/x-portable-graymap"
    return np.ascontiguousarray(pixels, "<f4").tobytes(), "application/octet-stream"


class SliceHandler(BaseHTTPRequestHandler):
    state: ServeState = None

    def log_message(self, *args):  # quiet
        pass

    def _send(self, code, body, content_type="application/json"):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, code, message):
        self._send(code, json.dumps({"error": message}).encode())

    def do_GET(self):
        state = self.state
        if state is None or not state.ready:
            return self._error(503, "checkpoint still loading")
        url = urlparse(self.path)
        query = parse_qs(url.query)
        try:
            if url.path == "/info":
                return self._send(200, json.dumps(state.info()).encode())
            if url.path == "/slice":
                spec, fmt = _parse_slice_query(query, state.default_spec)
                img = render_slice(state.cloud, spec, workers=state.workers)
                body, ctype = _encode(img.pixels, fmt)
                return self._send(200, body, ctype)
            if url.path == "/gt_slice":
                if state.volume is None:
                    return self._error(404, "no ground-truth volume loaded")
                spec, fmt = _parse_slice_query(query, state.default_spec)
                img = sample_slice(state.volume, spec)
                body, ctype = _encode(img.pixels, fmt)
                return self._send(200, body, ctype)
            return self._error(404, f"unknown path {url.path}")
        except InvalidParameterError as e:
            return self._error(400, str(e))


def make_server(checkpoint_path, volume_path=None, host="127.0.0.1",
                port=None, workers=1) -> ThreadingHTTPServer:
    if port is None:
        port = int(os.environ.get("ECHOSPLAT_PORT", DEFAULT_PORT))
    state = ServeState(checkpoint_path, volume_path, workers)
    handler = type("BoundSliceHandler", (SliceHandler,), {"state": state})
    return ThreadingHTTPServer((host, port), handler)


def run_server(args) -> None:
    server = make_server(args.checkpoint, args.volume, args.host, args.port,
                         args.workers)
    host, port = server.server_address
    print(json.dumps({"serving": f"http://{host}:{port}"}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
