"""Two-stage supervised pretraining against the procedural scenes.

Stage 1 fits mapping, synthesis, and the appearance decoder to ground-truth
color renders plus a density match at the shared quadrature points. Stage 2
freezes those and fits the geometry decoder with cross-entropy on composited
base-layout segmentation plus a density match to the stage-1 density.
"""

import numpy as np
from dataclasses import dataclass, field
from numpy.random import default_rng

from ..autodiff import AdamState, OneCycleSchedule, adam_step, no_grad, onecycle_lr
from ..config import DEFAULT, Config
from ..errors import TrainingDiverged
from ..rays import Camera, camera_rays, ray_box_intersect, sample_positions
from ..scenes import LAYOUTS, LatentSeed, composite_ground_truth, scene_from_latent
from .generator import mapping, normalize_triplane, synthesize_triplane
from .render import render_core, sample_features
from .decoders import decode_appearance

# density targets live on the scale of the density cap, so the L2 term is
# normalized by its square to sit in the same range as rgb error
SIGMA_NORM = 1.0 / 900.0


@dataclass
class PretrainConfig:
    stage1_steps: int = 20000
    stage2_steps: int = 10000
    batch_scenes: int = 8
    rays_per_scene: int = 1024
    peak_lr: float = 1e-3
    sigma_weight: float = 1.0
    yaw_range: float = 0.55
    pitch_range: float = 0.3
    log_every: int = 200


def _ray_batch(rng, pcfg: PretrainConfig, cfg: Config):
    """Random scene, camera, and ray subset with stratified quadrature."""
    seed = LatentSeed.random(rng)
    spec = scene_from_latent(seed)
    cam = Camera(yaw=float(rng.uniform(-pcfg.yaw_range, pcfg.yaw_range)),
                 pitch=float(rng.uniform(-pcfg.pitch_range, pcfg.pitch_range)),
                 width=cfg.image_size, height=cfg.image_size)
    origins, dirs = camera_rays(cam)
    pick = rng.choice(origins.shape[0], size=pcfg.rays_per_scene, replace=False)
    origins, dirs = origins[pick], dirs[pick]
    near, far, _ = ray_box_intersect(origins, dirs)
    pts, deltas, _ = sample_positions(origins, dirs, near, far,
                                      cfg.n_ray_samples, rng=rng)
    return seed, spec, dirs, pts, deltas


def _grads_of(subset):
    return {name: p.grad for name, p in subset.items() if p.grad is not None}


def _zero_all(params):
    for p in params.values():
        p.zero_grad()


def pretrain_stage1(params, pcfg: PretrainConfig = None, seed: int = 0,
                    cfg: Config = DEFAULT):
    """Train mapping + synthesis + appearance on rgb and density targets."""
    pcfg = pcfg or PretrainConfig()
    rng = default_rng(seed)
    trainable = {k: v for k, v in params.items()
                 if k.startswith(("map.", "syn.", "app."))}
    state = AdamState()
    sched = OneCycleSchedule(pcfg.peak_lr, max(pcfg.stage1_steps, 1))
    log = []
    base = LAYOUTS["base"]
    for step in range(pcfg.stage1_steps):
        losses = []
        for _ in range(pcfg.batch_scenes):
            z, spec, dirs, pts, deltas = _ray_batch(rng, pcfg, cfg)
            gt_rgb, _, _, gt_sigma = composite_ground_truth(spec, pts, deltas, base)
            w = mapping(params, z, cfg)
            planes = synthesize_triplane(params, w, cfg)
            core = render_core(params, planes, None, pts, deltas,
                               want_rgb=True, want_seg=False, sigma_from="app")
            d_rgb = core["rgb"] - gt_rgb.astype(np.float32)
            d_sig = core["sigma_app"] - gt_sigma.astype(np.float32)
            losses.append((d_rgb * d_rgb).mean()
                          + (d_sig * d_sig).mean() * (pcfg.sigma_weight * SIGMA_NORM))
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        loss = loss * (1.0 / len(losses))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"stage 1 loss became non-finite at step {step}")
        loss.backward()
        adam_step(trainable, _grads_of(trainable), state,
                  onecycle_lr(step, sched))
        _zero_all(params)
        if step % pcfg.log_every == 0 or step == pcfg.stage1_steps - 1:
            log.append({"stage": 1, "step": step, "loss": value})
    return params, log


def pretrain_stage2(params, pcfg: PretrainConfig = None, seed: int = 1,
                    cfg: Config = DEFAULT):
    """Train the geometry decoder only; everything else is frozen."""
    pcfg = pcfg or PretrainConfig()
    rng = default_rng(seed)
    trainable = {k: v for k, v in params.items() if k.startswith("geo.")}
    state = AdamState()
    sched = OneCycleSchedule(pcfg.peak_lr, max(pcfg.stage2_steps, 1))
    log = []
    base = LAYOUTS["base"]
    from ..losses import ce_loss
    for step in range(pcfg.stage2_steps):
        losses = []
        for _ in range(pcfg.batch_scenes):
            z, spec, dirs, pts, deltas = _ray_batch(rng, pcfg, cfg)
            _, _, gt_mask, _ = composite_ground_truth(spec, pts, deltas, base)
            with no_grad():
                w = mapping(params, z, cfg)
                planes = synthesize_triplane(params, w, cfg)
                planes_n, _, _ = normalize_triplane(planes)
                feats = sample_features(planes, pts.reshape(-1, 3))
                _, sigma_ref = decode_appearance(params, feats)
            core = render_core(params, planes, planes_n, pts, deltas,
                               want_rgb=False, want_seg=True, sigma_from="geo",
                               k_base=base.n_classes)
            d_sig = core["sigma_geo"] - sigma_ref.data.reshape(pts.shape[:2])
            losses.append(ce_loss(core["seg_full"], gt_mask)
                          + (d_sig * d_sig).mean() * (pcfg.sigma_weight * SIGMA_NORM))
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        loss = loss * (1.0 / len(losses))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(f"stage 2 loss became non-finite at step {step}")
        loss.backward()
        adam_step(trainable, _grads_of(trainable), state,
                  onecycle_lr(step, sched))
        _zero_all(params)
        if step % pcfg.log_every == 0 or step == pcfg.stage2_steps - 1:
            log.append({"stage": 2, "step": step, "loss": value})
    return params, log
