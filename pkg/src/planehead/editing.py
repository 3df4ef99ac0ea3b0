"""Mask-driven latent editing.

An edit optimizes a style-code offset so the rendered segmentation matches a
user-painted target mask, while a frozen random-feature perceptual distance
pins every pixel outside the editable region to the source image. The
returned offset is the best-loss iterate of the whole trace, so a request
whose target already matches the current prediction comes back as the exact
zero offset no matter how long the optimizer ran.

The percentage baseline is the same optimization with the overlap (dice)
term weighted to zero; it shares the code path so the two modes produce
bit-identical trajectories when the overlap weight is zero.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from .autodiff import Tensor, avg_pool2x, conv2d, no_grad
from .autodiff.optim import AdamState, adam_step
from .backbone import (extract_mask, load_params, mapping, normalize_triplane,
                       render, render_core, save_params, synthesize_triplane)
from .backbone.decoders import K_BASE
from .config import DEFAULT, Config
from .errors import ContractViolation, NanGradient, TrainingDiverged
from .losses import ce_loss, dice_loss
from .pngio import load_mask_png, save_mask_png
from .rays import (Camera, camera_from_dict, camera_rays, camera_to_dict,
                   ray_box_intersect, sample_positions)
from .scenes import LatentSeed

EDIT_LR = 0.01
INVERT_LR = 0.02
INVERT_THRESHOLD = 0.02


# ------------------------------------------------------------ perceptual

class PerceptualExtractor:
    """Frozen random convolution stacks at three image scales.

    Stands in for a pretrained perceptual network: random projections keep
    relative distances informative while staying deterministic for a seed.
    Weights never receive gradients; inputs do.
    """

    def __init__(self, seed: int = 0, width: int = 8, scales: int = 3):
        rng = np.random.default_rng(seed)
        self.scales = scales
        self.stacks = []
        for _ in range(scales):
            layers, c_in = [], 3
            for c_out in (width, width):
                w = rng.normal(0.0, np.sqrt(2.0 / (c_in * 9)),
                               (c_out, c_in, 3, 3)).astype(np.float32)
                layers.append(Tensor(w))
                c_in = c_out
            self.stacks.append(layers)

    def features(self, image) -> list:
        """image: (3, H, W) Tensor or array, values in [0, 1]."""
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, np.float32))
        if x.ndim != 3 or x.shape[0] != 3:
            raise ContractViolation(f"expected a (3, H, W) image, got {x.shape}")
        feats = []
        for i, layers in enumerate(self.stacks):
            if i > 0:
                x = avg_pool2x(x)
            h = x
            for w in layers:
                h = conv2d(h, w).leaky_relu(0.2)
            feats.append(h)
        return feats


_SHARED_EXTRACTOR = None


def default_extractor() -> PerceptualExtractor:
    global _SHARED_EXTRACTOR
    if _SHARED_EXTRACTOR is None:
        _SHARED_EXTRACTOR = PerceptualExtractor(seed=0)
    return _SHARED_EXTRACTOR


def _feature_l2(fa, fb) -> Tensor:
    total = None
    for a, b in zip(fa, fb):
        d = ((a - b) * (a - b)).mean()
        total = d if total is None else total + d
    return total


def perceptual_distance(a, b, region=None, extractor=None) -> Tensor:
    """Region-weighted multi-scale feature distance between two images.

    a, b: (3, H, W); region: (H, W) weights applied to both images before
    feature extraction, None meaning all-ones. Returns a scalar Tensor;
    differentiable in Tensor inputs.
    """
    ext = extractor or default_extractor()
    at = a if isinstance(a, Tensor) else Tensor(np.asarray(a, np.float32))
    bt = b if isinstance(b, Tensor) else Tensor(np.asarray(b, np.float32))
    if at.shape != bt.shape:
        raise ContractViolation(f"image shapes differ: {at.shape} vs {bt.shape}")
    if region is not None:
        wts = np.asarray(region, np.float32)
        if wts.shape != at.shape[1:]:
            raise ContractViolation(f"region {wts.shape} does not match image {at.shape[1:]}")
        at = at * wts
        bt = bt * wts
    return _feature_l2(ext.features(at), ext.features(bt))


# ------------------------------------------------------------ domain types

@dataclass
class EditRequest:
    """What to change: target mask plus the region allowed to change.

    region is 1 where pixels may change and must cover every pixel where
    target departs from the current prediction; lam_ovlp weights the dice
    overlap term and is forced to zero in percentage mode.
    """
    w: np.ndarray                 # source style code (L, D)
    camera: Camera
    target: np.ndarray            # (H, W) int class indices
    region: np.ndarray            # (H, W) in {0, 1}, 1 = allowed to change
    lam_ce: float = 0.5
    lam_ovlp: float = 1.0
    budget: int = 300
    mode: str = "overlap"

    def __post_init__(self):
        self.w = np.asarray(self.w, np.float32)
        self.target = np.asarray(self.target)
        self.region = np.asarray(self.region)
        if self.mode not in ("overlap", "percentage"):
            raise ContractViolation(f"unknown edit mode '{self.mode}'")
        if self.budget < 0:
            raise ContractViolation("step budget must be >= 0")
        if self.lam_ce < 0 or self.lam_ovlp < 0:
            raise ContractViolation("loss weights must be >= 0")
        hw = (self.camera.height, self.camera.width)
        if self.target.shape != hw or self.region.shape != hw:
            raise ContractViolation(
                f"target/region must match the camera image {hw}")
        if not np.isin(self.region, (0, 1)).all():
            raise ContractViolation("region must be binary")


@dataclass
class EditResult:
    delta_w: np.ndarray           # best-iterate offset, same shape as w
    image: np.ndarray             # (3, H, W) edited render
    mask: np.ndarray              # (H, W) uint8 hard mask
    trace: list                   # per-iterate dicts: step, total, perceptual, ce, dice
    duration: float               # wall-clock seconds
    request: EditRequest = None
    best_step: int = 0
    steps: int = 0                # optimizer updates performed


@dataclass
class InversionResult:
    w: np.ndarray
    image: np.ndarray             # render of the recovered code
    distance: float               # best combined perceptual + L2 loss
    converged: bool
    steps: int
    trace: list = field(default_factory=list)


def derive_region(source_mask, target_mask, dilation: int = 3) -> np.ndarray:
    """Default editable region: the mask difference dilated by a few pixels."""
    a = np.asarray(source_mask)
    b = np.asarray(target_mask)
    if a.shape != b.shape:
        raise ContractViolation("mask shapes differ")
    diff = a != b
    if dilation > 0 and diff.any():
        diff = binary_dilation(diff, iterations=dilation)
    return diff.astype(np.float32)


# ------------------------------------------------------------ rendering stack

def _fixed_rays(camera: Camera, cfg: Config):
    """Deterministic midpoint quadrature so every step sees identical points."""
    origins, dirs = camera_rays(camera)
    near, far, _ = ray_box_intersect(origins, dirs)
    pts, deltas, _ = sample_positions(origins, dirs, near, far,
                                      cfg.n_ray_samples, rng=None)
    return pts, deltas, dirs


def _forward(params, w_t, pts, deltas, dirs, seg_head, k_base, cfg,
             want_seg=True):
    planes = synthesize_triplane(params, w_t, cfg)
    planes_n, _, _ = normalize_triplane(planes)
    return render_core(params, planes, planes_n, pts, deltas, view_dirs=dirs,
                       seg_head=seg_head, sigma_from="geo",
                       want_rgb=True, want_seg=want_seg, k_base=k_base)


def _image_tensor(core, h, w):
    return core["rgb"].reshape(h, w, 3).transpose(2, 0, 1)


# ------------------------------------------------------------ edit optimizer

def optimize_edit(req: EditRequest, params, seg_head=None, *,
                  cfg: Config = DEFAULT, k_base: int = K_BASE,
                  extractor=None, early_stop_steps: int = 30,
                  early_stop_tol: float = 1e-4, on_step=None) -> EditResult:
    """Adam over a style offset initialized at zero.

    Loss per iterate: perceptual distance between source and current render,
    both masked to the kept region, plus lam_ce * cross-entropy against the
    target mask over the full image and lam_ovlp * dice over the region
    pixels only (each term owns its domain: perceptual the kept area, dice
    the editable area, cross-entropy everything). Percentage mode zeroes
    the dice weight, nothing else. Evaluates budget + 1 iterates (the zero
    offset first) and returns the one with the lowest total loss.
    """
    t0 = time.monotonic()
    if req.w.shape[0] != cfg.style_layers:
        raise ContractViolation(
            f"style code has {req.w.shape[0]} rows, expected {cfg.style_layers}")
    ext = extractor or default_extractor()
    h, wd = req.camera.height, req.camera.width
    pts, deltas, dirs = _fixed_rays(req.camera, cfg)
    region = req.region.astype(np.float32)
    keep = 1.0 - region
    target_flat = req.target.reshape(-1)
    r_idx = np.flatnonzero(region.reshape(-1) > 0.5)
    target_region = target_flat[r_idx]
    lam_ovlp = 0.0 if req.mode == "percentage" else req.lam_ovlp

    w_src = Tensor(req.w)
    with no_grad():
        src = _forward(params, w_src, pts, deltas, dirs, seg_head, k_base, cfg)
        src_img = src["rgb"].data.reshape(h, wd, 3).transpose(2, 0, 1)
        src_seg = src["seg"].data.reshape(h, wd, -1).transpose(2, 0, 1)
        src_mask = extract_mask(src_seg, src["opacity"].data.reshape(h, wd))
        diff = src_mask != req.target
        if np.any(diff & (region < 0.5)):
            raise ContractViolation(
                "region must cover every pixel where the target mask departs "
                "from the current prediction")
        if not region.any():
            # no pixel may change, so the identity edit is the only feasible
            # one; skip the optimizer rather than let full-image CE wander
            ce0 = ce_loss(src["seg_full"], target_flat).item()
            row = {"step": 0, "total": req.lam_ce * ce0,
                   "perceptual": 0.0, "ce": ce0, "dice": 0.0}
            if on_step is not None:
                on_step(0, row)
            return EditResult(
                delta_w=np.zeros_like(req.w),
                image=np.clip(src_img, 0.0, 1.0).astype(np.float32),
                mask=src_mask,
                trace=[row],
                duration=time.monotonic() - t0,
                request=req,
                best_step=0,
                steps=0,
            )
        f_src = ext.features(Tensor(src_img * keep[None]))

    delta = Tensor(np.zeros_like(req.w), requires_grad=True, name="delta_w")
    opt = AdamState()
    trace = []
    best_total = np.inf
    best = None
    best_dice = np.inf
    last_gain = 0

    for step in range(req.budget + 1):
        delta.zero_grad()
        core = _forward(params, w_src + delta, pts, deltas, dirs,
                        seg_head, k_base, cfg)
        img = _image_tensor(core, h, wd)
        p = _feature_l2(ext.features(img * keep), f_src)
        ce = ce_loss(core["seg_full"], target_flat)
        dc = dice_loss(core["seg_full"][r_idx], target_region)
        total = p + req.lam_ce * ce + lam_ovlp * dc

        row = {"step": step, "total": total.item(), "perceptual": p.item(),
               "ce": ce.item(), "dice": dc.item()}
        trace.append(row)
        if on_step is not None:
            on_step(step, row)
        if not np.isfinite(row["total"]):
            err = TrainingDiverged(f"edit loss became non-finite at step {step}")
            err.trace = trace
            raise err
        if row["total"] < best_total:
            best_total = row["total"]
            best = (delta.data.copy(), img.data.copy(),
                    core["seg"].data.copy(), core["opacity"].data.copy(), step)
        if row["dice"] < best_dice - early_stop_tol:
            best_dice = row["dice"]
            last_gain = step
        elif step - last_gain >= early_stop_steps:
            break
        if step == req.budget:
            break
        total.backward()
        try:
            adam_step({"delta_w": delta}, {"delta_w": delta.grad}, opt, EDIT_LR)
        except NanGradient as e:
            err = TrainingDiverged(str(e))
            err.trace = trace
            raise err from e

    d_best, img_best, seg_best, opac_best, best_step = best
    seg_img = seg_best.reshape(h, wd, -1).transpose(2, 0, 1)
    return EditResult(
        delta_w=d_best,
        image=np.clip(img_best, 0.0, 1.0).astype(np.float32),
        mask=extract_mask(seg_img, opac_best.reshape(h, wd)),
        trace=trace,
        duration=time.monotonic() - t0,
        request=req,
        best_step=best_step,
        steps=len(trace) - 1,
    )


def multi_view_check(result: EditResult, cameras, params, seg_head=None, *,
                     cfg: Config = DEFAULT, k_base: int = K_BASE) -> list:
    """Render the edited code from each camera and count class pixels.

    Edited classes are those on either side of the source/target mask
    difference at the edit view; the report carries full per-class counts so
    an identity edit can be compared against pre-edit renders directly.
    """
    if len(cameras) < 2:
        raise ContractViolation("multi-view check needs at least 2 cameras")
    req = result.request
    w_edit = req.w + result.delta_w
    with no_grad():
        planes = synthesize_triplane(params, Tensor(w_edit), cfg).data
        src_planes = synthesize_triplane(params, Tensor(req.w), cfg).data
    src_view = render(params, src_planes, req.camera, seg_head=seg_head,
                      k_base=k_base, cfg=cfg)
    diff = src_view.mask != req.target
    edited = sorted(set(np.unique(req.target[diff]).tolist())
                    | set(np.unique(src_view.mask[diff]).tolist()))
    report = []
    for i, cam in enumerate(cameras):
        out = render(params, planes, cam, seg_head=seg_head,
                     k_base=k_base, cfg=cfg)
        n_classes = out.seg.shape[0]
        counts = {c: int((out.mask == c).sum()) for c in range(n_classes)}
        report.append({"camera_index": i, "class_counts": counts,
                       "edited_classes": [int(c) for c in edited]})
    return report


# ------------------------------------------------------------ inversion

def invert_latent(image, params, camera: Camera, *, cfg: Config = DEFAULT,
                  init=None, budget: int = 150, lr: float = INVERT_LR,
                  threshold: float = INVERT_THRESHOLD,
                  extractor=None) -> InversionResult:
    """Recover a style code whose render matches the given image.

    Gradient descent on the full style code minimizing perceptual plus pixel
    L2 distance. init defaults to the mapping of the all-zeros latent.
    Stops early once comfortably under the convergence threshold; if the
    budget runs out above it, the best-so-far code is returned flagged
    non-converged.
    """
    img = np.asarray(image, np.float32)
    h, wd = camera.height, camera.width
    if img.shape != (3, h, wd):
        raise ContractViolation(f"expected a (3, {h}, {wd}) image, got {img.shape}")
    ext = extractor or default_extractor()
    if init is None:
        with no_grad():
            init = mapping(params, LatentSeed.zeros(), cfg).data
    w_var = Tensor(np.array(init, np.float32, copy=True),
                   requires_grad=True, name="w_inv")
    if w_var.shape[0] != cfg.style_layers:
        raise ContractViolation(
            f"init has {w_var.shape[0]} rows, expected {cfg.style_layers}")

    pts, deltas, dirs = _fixed_rays(camera, cfg)
    with no_grad():
        f_target = ext.features(Tensor(img))
    img_t = Tensor(img)
    opt = AdamState()
    trace = []
    best_loss = np.inf
    best = None

    for step in range(budget + 1):
        w_var.zero_grad()
        core = _forward(params, w_var, pts, deltas, dirs, None, K_BASE, cfg,
                        want_seg=False)
        cur = _image_tensor(core, h, wd)
        p = _feature_l2(ext.features(cur), f_target)
        mse = ((cur - img_t) * (cur - img_t)).mean()
        total = p + mse
        val = total.item()
        trace.append(val)
        if not np.isfinite(val):
            err = TrainingDiverged(f"inversion loss became non-finite at step {step}")
            err.trace = trace
            raise err
        if val < best_loss:
            best_loss = val
            best = (w_var.data.copy(), cur.data.copy())
        if best_loss <= 0.5 * threshold or step == budget:
            break
        total.backward()
        adam_step({"w_inv": w_var}, {"w_inv": w_var.grad}, opt, lr)

    w_best, img_best = best
    return InversionResult(
        w=w_best,
        image=np.clip(img_best, 0.0, 1.0).astype(np.float32),
        distance=best_loss,
        converged=bool(best_loss <= threshold),
        steps=len(trace) - 1,
        trace=trace,
    )


# ------------------------------------------------------------ serialization

def save_edit_result(dirpath, result: EditResult, class_names=None):
    """Directory layout: latent blob, indexed-PNG masks, CSV trace, JSON meta."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    req = result.request
    save_params(d / "edit.ckpt", {
        "w_source": Tensor(req.w),
        "delta_w": Tensor(result.delta_w),
        "image": Tensor(result.image),
    })
    save_mask_png(result.mask, d / "mask_edited.png", class_names=class_names)
    save_mask_png(req.target, d / "mask_target.png", class_names=class_names)
    save_mask_png(req.region.astype(np.uint8), d / "region.png")
    with open(d / "trace.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "total", "perceptual", "ce", "dice"])
        for row in result.trace:
            wr.writerow([row["step"], row["total"], row["perceptual"],
                         row["ce"], row["dice"]])
    (d / "meta.json").write_text(json.dumps({
        "camera": camera_to_dict(req.camera),
        "lam_ce": req.lam_ce, "lam_ovlp": req.lam_ovlp,
        "budget": req.budget, "mode": req.mode,
        "duration": result.duration, "best_step": result.best_step,
        "steps": result.steps,
    }, indent=2))
    return d


def load_edit_result(dirpath) -> EditResult:
    d = Path(dirpath)
    meta = json.loads((d / "meta.json").read_text())
    blob = load_params(d / "edit.ckpt")
    trace = []
    with open(d / "trace.csv", newline="") as f:
        for row in csv.DictReader(f):
            trace.append({"step": int(row["step"]), "total": float(row["total"]),
                          "perceptual": float(row["perceptual"]),
                          "ce": float(row["ce"]), "dice": float(row["dice"])})
    req = EditRequest(
        w=blob["w_source"],
        camera=camera_from_dict(meta["camera"]),
        target=load_mask_png(d / "mask_target.png"),
        region=load_mask_png(d / "region.png"),
        lam_ce=meta["lam_ce"], lam_ovlp=meta["lam_ovlp"],
        budget=meta["budget"], mode=meta["mode"],
    )
    return EditResult(
        delta_w=blob["delta_w"],
        image=blob["image"],
        mask=load_mask_png(d / "mask_edited.png"),
        trace=trace,
        duration=meta["duration"],
        request=req,
        best_step=meta["best_step"],
        steps=meta["steps"],
    )
