"""Volume renderer for the tri-plane pipeline.

render_core works on explicit sample points so training can supervise the
exact quadrature the ground truth uses; render wraps it per camera. A
seg_head callable, when given, replaces the base geometry head's class
distribution (the refinement hook); it receives the normalized features,
per-point view directions, base logits and density, and returns logits.
"""

import numpy as np
from dataclasses import dataclass

from ..autodiff import Tensor, bilinear_sample, concat, no_grad, softmax
from ..config import DEFAULT, Config
from ..rays import Camera, camera_rays, ray_box_intersect, sample_positions
from .decoders import K_BASE, decode_appearance, decode_geometry
from .generator import TriPlane, normalize_triplane


def sample_features(planes, pts):
    """Sum of the three bilinear plane samples.

    planes: Tensor (3, C, R, R); pts: (M, 3) array in [-1, 1]^3.
    """
    uv = np.asarray(pts, dtype=np.float32)
    return (bilinear_sample(planes[0], uv[:, (0, 1)])
            + bilinear_sample(planes[1], uv[:, (0, 2)])
            + bilinear_sample(planes[2], uv[:, (1, 2)]))


def composite_weights_t(sigma, deltas):
    """Tensor version of the quadrature weights. sigma, deltas: (R, N)."""
    tau = sigma * deltas
    alpha = 1.0 - (-tau).exp()
    trans = (-(tau.cumsum(axis=1) - tau)).exp()
    return trans * alpha


def render_core(params, planes_raw, planes_norm, pts, deltas, view_dirs=None,
                seg_head=None, sigma_from="geo", want_rgb=True, want_seg=True,
                k_base=K_BASE):
    """Differentiable compositing at given sample points.

    pts: (R, N, 3), deltas: (R, N), view_dirs: (R, 3) or None.
    Returns a dict of Tensors: rgb (R,3), seg (R,K) summing to opacity,
    seg_full (R,K) with the missed mass folded into class 0, opacity (R,),
    sigma (R,N), sigma_app (R,N), weights (R,N).
    """
    n_rays, n_samp, _ = pts.shape
    flat = pts.reshape(-1, 3)
    out = {}

    sigma_app = rgb_s = None
    if want_rgb or sigma_from == "app":
        feats = sample_features(planes_raw, flat)
        rgb_s, sigma_app = decode_appearance(params, feats)
        out["sigma_app"] = sigma_app.reshape(n_rays, n_samp)

    logits = sigma_geo = None
    if want_seg or sigma_from == "geo":
        feats_n = sample_features(planes_norm, flat)
        logits, sigma_geo = decode_geometry(params, feats_n, k_base)
        out["sigma_geo"] = sigma_geo.reshape(n_rays, n_samp)

    sigma = out["sigma_geo"] if sigma_from == "geo" else out["sigma_app"]
    weights = composite_weights_t(sigma, np.asarray(deltas, dtype=np.float32))
    opacity = weights.sum(axis=1)
    out["sigma"] = sigma
    out["weights"] = weights
    out["opacity"] = opacity

    if want_rgb:
        w3 = weights.reshape(n_rays, n_samp, 1)
        out["rgb"] = (w3 * rgb_s.reshape(n_rays, n_samp, 3)).sum(axis=1)

    if want_seg:
        if seg_head is not None:
            if view_dirs is None:
                raise ValueError("seg_head requires view directions")
            vd = np.repeat(np.asarray(view_dirs, dtype=np.float32), n_samp, axis=0)
            logits = seg_head(feats_n, vd, logits, sigma_geo)
        probs = softmax(logits, axis=-1)
        k = probs.shape[-1]
        wk = weights.reshape(n_rays, n_samp, 1)
        seg = (wk * probs.reshape(n_rays, n_samp, k)).sum(axis=1)
        missed = (1.0 - opacity).reshape(n_rays, 1)
        out["seg"] = seg
        out["seg_full"] = concat([seg[:, :1] + missed, seg[:, 1:]], axis=1)
    return out


@dataclass
class RenderOutput:
    rgb: np.ndarray        # (3, H, W) in [0, 1]
    seg: np.ndarray        # (K, H, W), per-pixel sums to opacity
    mask: np.ndarray       # (H, W) uint8 argmax, missed mass counts as class 0
    opacity: np.ndarray    # (H, W)
    depth: np.ndarray      # (H, W) weighted mean sample distance
    sigma: np.ndarray      # (H, W, N) density at the quadrature points
    weights: np.ndarray    # (H, W, N)


def extract_mask(seg, opacity):
    """Hard mask from a composited class image. Class 0 absorbs missed rays."""
    full = seg.copy()
    full[0] += 1.0 - opacity
    return np.argmax(full, axis=0).astype(np.uint8)


def render(params, planes, camera: Camera, seg_head=None, sigma_from="geo",
           rng=None, k_base=K_BASE, cfg: Config = DEFAULT) -> RenderOutput:
    """Full-image inference render (no gradients retained)."""
    if isinstance(planes, TriPlane):
        planes = planes.planes
    h, w = camera.height, camera.width
    origins, dirs = camera_rays(camera)
    near, far, _ = ray_box_intersect(origins, dirs)
    pts, deltas, t = sample_positions(origins, dirs, near, far,
                                      cfg.n_ray_samples, rng=rng)
    with no_grad():
        planes_t = Tensor(np.asarray(planes, dtype=np.float32))
        planes_n, _, _ = normalize_triplane(planes_t)
        core = render_core(params, planes_t, planes_n, pts, deltas,
                           view_dirs=dirs, seg_head=seg_head,
                           sigma_from=sigma_from, k_base=k_base)
    rgb = core["rgb"].data.reshape(h, w, 3).transpose(2, 0, 1)
    k = core["seg"].shape[1]
    seg = core["seg"].data.reshape(h, w, k).transpose(2, 0, 1)
    opacity = core["opacity"].data.reshape(h, w)
    weights = core["weights"].data.reshape(h, w, -1)
    depth = (core["weights"].data * t).sum(axis=1).reshape(h, w)
    return RenderOutput(
        rgb=np.clip(rgb, 0.0, 1.0).astype(np.float32),
        seg=seg.astype(np.float32),
        mask=extract_mask(seg, opacity),
        opacity=opacity.astype(np.float32),
        depth=depth.astype(np.float32),
        sigma=core["sigma"].data.reshape(h, w, -1).astype(np.float32),
        weights=weights.astype(np.float32),
    )
