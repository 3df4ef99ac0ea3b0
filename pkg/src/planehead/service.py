"""Local HTTP service exposing sampling, rendering, masks, and edit jobs.

Read endpoints are handled concurrently on server threads; edit
optimization runs on a single worker thread behind a FIFO queue of
depth 4. Model parameters are loaded once and never written back.
"""

import json
import os
import queue
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
from numpy.random import default_rng

from .adapter import make_seg_head
from .autodiff import Tensor, no_grad
from .backbone.checkpoint import load_params, to_tensors
from .backbone.generator import mapping, synthesize_triplane
from .backbone.render import render
from .config import DEFAULT, Config
from .editing import EditRequest, derive_region, optimize_edit
from .errors import ContractViolation
from .pngio import PALETTE, rgb_png_bytes
from .rays import Camera
from .scenes import LAYOUTS, LatentSeed

QUEUE_DEPTH = 4
DEFAULT_PORT = 8087
YAW_LIMIT = 0.55
PITCH_LIMIT = 0.30

_STATE_ORDER = {"queued": 0, "running": 1, "done": 2, "failed": 2}


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass
class JobRecord:
    id: str
    kind: str = "edit"
    state: str = "queued"
    progress: float = 0.0
    result: str = ""
    error: str = ""
    metrics: dict = field(default_factory=dict)
    target_grid: dict = None      # submitted mask grid, echoed verbatim

    def advance(self, state: str):
        if _STATE_ORDER[state] < _STATE_ORDER[self.state]:
            raise ContractViolation(
                f"job state cannot go back from {self.state} to {state}")
        self.state = state

    def bump(self, fraction: float):
        self.progress = max(self.progress, min(float(fraction), 1.0))

    def to_dict(self):
        out = {"id": self.id, "kind": self.kind, "state": self.state,
               "progress": self.progress, "result": self.result,
               "error": self.error, "metrics": self.metrics}
        if self.target_grid is not None:
            out["target_mask"] = self.target_grid
        return out


class ServiceState:
    """Loaded checkpoints plus per-session caches and the job queue."""

    def __init__(self, params, adapters=None, cfg: Config = DEFAULT,
                 edit_budget: int = 300, start_worker: bool = True):
        self.params = params
        self.adapters = adapters or {}
        self.cfg = cfg
        self.edit_budget = edit_budget
        self.checkpoint_id = str(uuid.uuid4())
        self.latents = {}
        self.planes = {}
        self.jobs = {}
        self.results = {}
        self.render_cache = {}
        self.lock = threading.Lock()
        self.queue = queue.Queue(maxsize=QUEUE_DEPTH)
        self._worker = threading.Thread(target=self._run_jobs, daemon=True)
        if start_worker:
            self._worker.start()

    def set_checkpoints(self, params, adapters=None):
        """Swap model weights; render caches keyed to the old id are dropped."""
        with self.lock:
            self.params = params
            self.adapters = adapters or {}
            self.checkpoint_id = str(uuid.uuid4())
            self.render_cache.clear()
            self.planes.clear()

    # latents -----------------------------------------------------------
    def sample(self, seed: int):
        lid = f"s{seed}"
        with self.lock:
            if lid not in self.latents:
                w = mapping(self.params, LatentSeed.random(default_rng(seed)),
                            self.cfg)
                self.latents[lid] = w.data.copy()
        return lid

    def latent(self, lid: str):
        with self.lock:
            if lid not in self.latents:
                raise HttpError(404, f"unknown latent {lid!r}")
            return self.latents[lid]

    def planes_for(self, lid: str):
        w = self.latent(lid)
        with self.lock:
            hit = self.planes.get(lid)
        if hit is not None:
            return hit
        with no_grad():
            planes = synthesize_triplane(self.params, Tensor(w), self.cfg).data
        with self.lock:
            return self.planes.setdefault(lid, planes)

    # rendering ---------------------------------------------------------
    def seg_head(self, layout_name: str):
        if layout_name == "base":
            return None, LAYOUTS["base"]
        layout = LAYOUTS.get(layout_name)
        if layout is None:
            raise HttpError(404, f"unknown layout {layout_name!r}")
        adapter = self.adapters.get(layout_name)
        if adapter is None:
            raise HttpError(404, f"no adapter loaded for layout {layout_name!r}")
        return make_seg_head(adapter), layout

    def render_png(self, lid: str, camera: Camera) -> bytes:
        key = (self.checkpoint_id, lid, camera.yaw, camera.pitch, camera.width)
        with self.lock:
            hit = self.render_cache.get(key)
        if hit is not None:
            return hit
        out = render(self.params, self.planes_for(lid), camera, cfg=self.cfg)
        png = rgb_png_bytes(out.rgb)
        with self.lock:
            self.render_cache[key] = png
        return png

    def mask_grid(self, lid: str, camera: Camera, layout_name: str) -> dict:
        head, layout = self.seg_head(layout_name)
        out = render(self.params, self.planes_for(lid), camera,
                     seg_head=head, cfg=self.cfg)
        names = list(layout.class_names)
        return {"width": camera.width, "height": camera.height,
                "layout": layout.name, "classes": names,
                "palette": [list(c) for c in PALETTE[:len(names)]],
                "data": [int(v) for v in out.mask.reshape(-1)]}

    # edit jobs ---------------------------------------------------------
    def submit_edit(self, req: EditRequest, seg_head, source_latent: str,
                    target_grid: dict = None):
        job = JobRecord(id=uuid.uuid4().hex[:12], kind="edit",
                        target_grid=target_grid)
        with self.lock:
            self.jobs[job.id] = job
        try:
            self.queue.put_nowait((job.id, req, seg_head, source_latent))
        except queue.Full:
            with self.lock:
                del self.jobs[job.id]
            raise HttpError(409, f"edit queue full (depth {QUEUE_DEPTH})")
        return job

    def job(self, job_id: str) -> JobRecord:
        with self.lock:
            rec = self.jobs.get(job_id)
        if rec is None:
            raise HttpError(404, f"unknown job {job_id!r}")
        return rec

    def _run_jobs(self):
        while True:
            job_id, req, seg_head, source_latent = self.queue.get()
            job = self.jobs[job_id]
            job.advance("running")
            try:
                budget = max(req.budget, 1)

                def on_step(step, row):
                    job.bump(step / budget)
                    # live loss feed for client sparklines; replaced by the
                    # summary dict once the job completes
                    job.metrics = {"step": step, "total": row["total"],
                                   "dice": row["dice"]}

                res = optimize_edit(req, self.params, seg_head=seg_head,
                                    cfg=self.cfg, on_step=on_step)
                with self.lock:
                    self.results[job_id] = (res, source_latent)
                job.metrics = {
                    "delta_norm": float(np.linalg.norm(res.delta_w)),
                    "best_step": res.best_step,
                    "steps": res.steps,
                    "dice_initial": float(res.trace[0]["dice"]),
                    "dice_final": float(res.trace[res.best_step]["dice"]),
                    "duration": res.duration,
                }
                job.result = f"/api/result/{job_id}"
                job.bump(1.0)
                job.advance("done")
            except Exception as e:  # failures land in the record, worker lives on
                job.error = f"{type(e).__name__}: {e}"
                job.advance("failed")

    def result_png(self, job_id: str, camera: Camera) -> bytes:
        with self.lock:
            entry = self.results.get(job_id)
        if entry is None:
            raise HttpError(404, f"no result for job {job_id!r}")
        res, _ = entry
        w_edit = res.request.w + res.delta_w
        with no_grad():
            planes = synthesize_triplane(self.params, Tensor(w_edit), self.cfg).data
        out = render(self.params, planes, camera, cfg=self.cfg)
        return rgb_png_bytes(out.rgb)


def load_state(data_dir, cfg: Config = DEFAULT, edit_budget: int = 300) -> ServiceState:
    """Build service state from a checkpoint directory.

    Expects backbone.ckpt; optional adapter_<layout>.ckpt files enable
    refined layouts. Files are opened read-only and never rewritten.
    """
    bpath = os.path.join(data_dir, "backbone.ckpt")
    if not os.path.isfile(bpath):
        raise ContractViolation(f"no backbone checkpoint at {bpath}")
    params = to_tensors(load_params(bpath), requires_grad=False)
    adapters = {}
    for name in LAYOUTS:
        apath = os.path.join(data_dir, f"adapter_{name}.ckpt")
        if os.path.isfile(apath):
            adapters[name] = to_tensors(load_params(apath), requires_grad=False)
    return ServiceState(params, adapters, cfg, edit_budget)


# request plumbing ------------------------------------------------------

def _query_float(qs, name, default):
    try:
        return float(qs[name][0]) if name in qs else default
    except ValueError:
        raise HttpError(400, f"malformed query parameter {name!r}")


def _query_int(qs, name, default):
    try:
        return int(qs[name][0]) if name in qs else default
    except ValueError:
        raise HttpError(400, f"malformed query parameter {name!r}")


def _camera_from_query(qs, cfg) -> Camera:
    size = _query_int(qs, "size", cfg.image_size)
    if not 4 <= size <= 256:
        raise HttpError(400, "malformed query parameter 'size'")
    return Camera(yaw=_query_float(qs, "yaw", 0.0),
                  pitch=_query_float(qs, "pitch", 0.0),
                  width=size, height=size)


def _grid_array(body, field_name, width, height, n_classes=None):
    grid = body.get(field_name)
    if grid is None:
        return None
    data = grid.get("data") if isinstance(grid, dict) else grid
    if not isinstance(data, list) or len(data) != width * height:
        raise HttpError(400, f"field {field_name!r} must hold {width * height} cells")
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.integer):
        raise HttpError(400, f"field {field_name!r} must hold integer class indices")
    if n_classes is not None and (arr.min() < 0 or arr.max() >= n_classes):
        raise HttpError(400, f"field {field_name!r} has class index out of range")
    return arr.astype(np.uint8).reshape(height, width)


def parse_edit_body(state: ServiceState, body: dict):
    """Validate a POST /api/edit body into an EditRequest plus seg head."""
    if not isinstance(body, dict):
        raise HttpError(400, "malformed body")
    lid = body.get("latent")
    if not isinstance(lid, str):
        raise HttpError(400, "field 'latent' must be a latent id string")
    w = state.latent(lid)

    cam_spec = body.get("camera")
    if not isinstance(cam_spec, dict):
        raise HttpError(400, "field 'camera' must be an object")
    try:
        size = int(cam_spec.get("size", state.cfg.image_size))
        camera = Camera(yaw=float(cam_spec.get("yaw", 0.0)),
                        pitch=float(cam_spec.get("pitch", 0.0)),
                        width=size, height=size)
    except (TypeError, ValueError):
        raise HttpError(400, "field 'camera' has non-numeric values")

    layout_name = body.get("layout", "base")
    seg_head, layout = state.seg_head(layout_name)
    n_classes = len(layout.class_names)

    target = _grid_array(body, "target_mask", camera.width, camera.height,
                         n_classes)
    if target is None:
        raise HttpError(400, "field 'target_mask' is required")
    region = _grid_array(body, "region", camera.width, camera.height)
    if region is not None and not np.isin(region, (0, 1)).all():
        raise HttpError(400, "field 'region' must be binary")
    if region is None:
        current = render(state.params, state.planes_for(lid), camera,
                         seg_head=seg_head, cfg=state.cfg).mask
        region = derive_region(current, target)

    weights = body.get("weights") or {}
    if not isinstance(weights, dict):
        raise HttpError(400, "field 'weights' must be an object")
    mode = body.get("mode", "overlap")
    budget = body.get("budget", state.edit_budget)
    try:
        req = EditRequest(w=w, camera=camera, target=target, region=region,
                          lam_ce=float(weights.get("lam_ce", 0.5)),
                          lam_ovlp=float(weights.get("lam_ovlp", 1.0)),
                          budget=int(budget), mode=mode)
    except ContractViolation as e:
        raise HttpError(400, str(e))
    except (TypeError, ValueError):
        raise HttpError(400, "field 'weights' or 'budget' has non-numeric values")
    return req, seg_head, lid


class Handler(BaseHTTPRequestHandler):
    state: ServiceState = None
    quiet = True

    def log_message(self, fmt, *args):
        if not self.quiet:
            super().log_message(fmt, *args)

    def _send_json(self, payload, status=200):
        blob = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _send_png(self, blob):
        self.send_response(200)
        self.send_header("Content-Type", "image/png")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def _fail(self, e: HttpError):
        self._send_json({"error": str(e)}, status=e.status)

    def do_GET(self):
        url = urlparse(self.path)
        qs = parse_qs(url.query)
        st = self.state
        try:
            if url.path == "/api/sample":
                seed = _query_int(qs, "seed", 0)
                lid = st.sample(seed)
                self._send_json({"latent": lid, "seed": seed,
                                 "layers": st.cfg.style_layers,
                                 "dim": st.cfg.style_dim})
            elif url.path == "/api/render":
                lid = qs.get("latent", [None])[0]
                if lid is None:
                    raise HttpError(400, "missing query parameter 'latent'")
                cam = _camera_from_query(qs, st.cfg)
                self._send_png(st.render_png(lid, cam))
            elif url.path == "/api/mask":
                lid = qs.get("latent", [None])[0]
                if lid is None:
                    raise HttpError(400, "missing query parameter 'latent'")
                cam = _camera_from_query(qs, st.cfg)
                layout = qs.get("layout", ["base"])[0]
                self._send_json(st.mask_grid(lid, cam, layout))
            elif url.path.startswith("/api/job/"):
                self._send_json(st.job(url.path.rsplit("/", 1)[1]).to_dict())
            elif url.path.startswith("/api/result/"):
                job_id = url.path.rsplit("/", 1)[1]
                cam = _camera_from_query(qs, st.cfg)
                self._send_png(st.result_png(job_id, cam))
            elif url.path == "/api/layouts":
                rows = []
                for name, layout in LAYOUTS.items():
                    rows.append({"name": name,
                                 "classes": list(layout.class_names),
                                 "palette": [list(c) for c in
                                             PALETTE[:len(layout.class_names)]],
                                 "has_adapter": name == "base" or name in st.adapters})
                self._send_json({"layouts": rows,
                                 "camera_limits": {"yaw": [-YAW_LIMIT, YAW_LIMIT],
                                                   "pitch": [-PITCH_LIMIT, PITCH_LIMIT]},
                                 "default_size": st.cfg.image_size})
            else:
                raise HttpError(404, f"unknown path {url.path!r}")
        except HttpError as e:
            self._fail(e)
        except ContractViolation as e:
            self._fail(HttpError(400, str(e)))

    def do_POST(self):
        url = urlparse(self.path)
        st = self.state
        try:
            if url.path != "/api/edit":
                raise HttpError(404, f"unknown path {url.path!r}")
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw or b"{}")
            except json.JSONDecodeError:
                raise HttpError(400, "malformed body: not valid JSON")
            req, seg_head, lid = parse_edit_body(st, body)
            job = st.submit_edit(req, seg_head, lid,
                                 target_grid=body.get("target_mask"))
            self._send_json({"job": job.id}, status=202)
        except HttpError as e:
            self._fail(e)
        except ContractViolation as e:
            self._fail(HttpError(400, str(e)))


def make_server(state: ServiceState, host="127.0.0.1", port=DEFAULT_PORT,
                quiet=True) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"state": state, "quiet": quiet})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve(data_dir, port=DEFAULT_PORT, host="127.0.0.1", cfg: Config = DEFAULT,
          log=None):
    state = load_state(data_dir, cfg)
    server = make_server(state, host=host, port=port, quiet=log is None)
    if log:
        log(f"serving on http://{host}:{server.server_address[1]}/api/ "
            f"(layouts with adapters: {sorted(state.adapters) or ['base only']})")
    try:
        server.serve_forever()
    finally:
        server.server_close()
