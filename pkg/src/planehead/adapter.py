"""Few-shot geometry refinement: the injected adapter head, latent-mixing
augmentation, and the training loop that fits a refined mask layout from a
handful of examples while the backbone stays frozen.

The adapter consumes, per sample point, the normalized tri-plane feature,
the view direction, the base head's logits, and the base head's density
(which also remains the compositing density). It emits logits over the
target layout. Latent mixing rebuilds the tri-plane from a style code whose
selected rows are blended toward a fresh draw, which multiplies the
effective training distribution without new masks.
"""

import json
import numpy as np
from dataclasses import dataclass
from numpy.random import default_rng
from pathlib import Path

from .autodiff import (AdamState, OneCycleSchedule, Tensor, adam_step, concat,
                       linear, no_grad, onecycle_lr, softmax)
from .config import DEFAULT, Config
from .errors import ContractViolation, TrainingDiverged
from .losses import ce_loss, dice_loss, total_loss  # noqa: F401  (re-export)
from .rays import (Camera, camera_from_dict, camera_rays, camera_to_dict,
                   composite_weights, ray_box_intersect,
                   sample_positions)
from .scenes import LAYOUTS, LatentSeed, LayoutSpec
from .backbone import K_BASE
from .backbone.decoders import decode_geometry
from .backbone.generator import mapping, normalize_triplane, synthesize_triplane
from .backbone.render import sample_features
from .pngio import load_mask_png, save_mask_png

ADAPTER_SLOPE = 0.01


# ------------------------------------------------------------------ mixing

@dataclass
class MixSpec:
    """Which style rows get blended, and how far toward the fresh draw."""
    sel: np.ndarray
    alpha: float = 0.5

    def __post_init__(self):
        self.sel = np.asarray(self.sel)
        if not np.isin(self.sel, (0, 1)).all():
            raise ContractViolation("Sel entries must be 0 or 1")
        self.sel = self.sel.astype(np.float32)
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolation("alpha must lie in [0, 1]")

    @classmethod
    def default(cls, cfg: Config = DEFAULT, alpha: float = 0.5):
        """Blend the top five rows (the appearance range)."""
        sel = np.zeros(cfg.style_layers, dtype=np.float32)
        sel[cfg.style_layers - 5:] = 1.0
        return cls(sel=sel, alpha=alpha)

    @classmethod
    def all_rows(cls, cfg: Config = DEFAULT, alpha: float = 0.5):
        return cls(sel=np.ones(cfg.style_layers, dtype=np.float32), alpha=alpha)


def lmta_mix(w, w_new, spec: MixSpec):
    """Row i -> alpha*w_new_i + (1-alpha)*w_i where selected, else w_i.

    Accepts arrays or Tensors; returns the same kind. Unselected rows are
    carried through untouched so Sel=0 is exact row equality.
    """
    w_arr = w.data if isinstance(w, Tensor) else np.asarray(w)
    n_arr = w_new.data if isinstance(w_new, Tensor) else np.asarray(w_new)
    if w_arr.shape != n_arr.shape:
        raise ContractViolation("style codes differ in shape")
    if spec.sel.shape[0] != w_arr.shape[0]:
        raise ContractViolation("Sel length does not match style rows")
    keep = spec.sel.astype(bool)
    out = w_arr.copy()
    out[keep] = spec.alpha * n_arr[keep] + (1.0 - spec.alpha) * w_arr[keep]
    return Tensor(out) if isinstance(w, Tensor) else out


# ------------------------------------------------------------------ adapter

def adapter_input_width(cfg: Config = DEFAULT, k_base: int = K_BASE,
                        no_injection: bool = False) -> int:
    if no_injection:
        return k_base + 1
    return cfg.plane_channels + 3 + k_base + 1


def init_adapter(rng, layout: LayoutSpec, cfg: Config = DEFAULT,
                 k_base: int = K_BASE, no_injection: bool = False):
    """Fresh adapter perceptron for one target layout."""
    widths = [adapter_input_width(cfg, k_base, no_injection)]
    widths += [cfg.adapter_hidden] * cfg.adapter_depth
    widths += [layout.n_classes]
    params = {}
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)).astype(np.float32)
        params[f"phi.{i}.w"] = Tensor(w, requires_grad=True, name=f"phi.{i}.w")
        params[f"phi.{i}.b"] = Tensor(np.zeros(n_out, dtype=np.float32),
                                      requires_grad=True, name=f"phi.{i}.b")
    return params


def adapter_forward(params, feature, v_d, base_logits, sigma,
                    no_injection: bool = False):
    """Concatenate [feature, v_d, base_logits, sigma] and run the perceptron."""
    n_in = params["phi.0.w"].shape[0]
    sig_col = sigma.reshape(sigma.shape[0], 1) if sigma.ndim == 1 else sigma
    if no_injection:
        parts, labels = [base_logits, sig_col], ["base_logits", "sigma"]
    else:
        vd_t = v_d if isinstance(v_d, Tensor) else Tensor(np.asarray(v_d, dtype=np.float32))
        parts = [feature, vd_t, base_logits, sig_col]
        labels = ["feature", "view_direction", "base_logits", "sigma"]
    widths = {"feature": None, "view_direction": 3, "sigma": 1}
    total = sum(p.shape[1] for p in parts)
    if total != n_in:
        for part, label in zip(parts, labels):
            want = widths.get(label)
            if want is not None and part.shape[1] != want:
                raise ContractViolation(
                    f"adapter input segment '{label}' has width {part.shape[1]}, expected {want}")
        raise ContractViolation(
            f"adapter input width {total} does not match parameters ({n_in}); "
            f"segments: {', '.join(f'{l}={p.shape[1]}' for p, l in zip(parts, labels))}")
    h = concat(parts, axis=1)
    depth = len([k for k in params if k.endswith(".w")])
    for i in range(depth):
        h = linear(h, params[f"phi.{i}.w"], params[f"phi.{i}.b"])
        if i < depth - 1:
            h = h.leaky_relu(ADAPTER_SLOPE)
    return h


def make_seg_head(params, no_injection: bool = False):
    """Bind adapter params into the renderer's segmentation hook."""
    def seg_head(feats_norm, v_d, base_logits, sigma):
        return adapter_forward(params, feats_norm, v_d, base_logits, sigma,
                               no_injection=no_injection)
    return seg_head


# ----------------------------------------------------------------- few-shot

@dataclass
class FewShotItem:
    w_plus: np.ndarray       # (L, D) style code
    camera: Camera
    mask: np.ndarray         # (H, W) target-layout labels


@dataclass
class FewShotSet:
    items: list
    layout: LayoutSpec

    def __post_init__(self):
        if len(self.items) < 1:
            raise ContractViolation("few-shot set needs at least one item")
        k = self.layout.n_classes
        for it in self.items:
            if it.mask.max() >= k:
                raise ContractViolation(
                    f"mask label {int(it.mask.max())} outside layout '{self.layout.name}'")

    def __len__(self):
        return len(self.items)


def save_fewshot(dirpath, fs: FewShotSet):
    """Directory layout: per-sample JSON (style code + camera) + indexed PNG."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    (d / "set.json").write_text(json.dumps(
        {"layout": fs.layout.name, "count": len(fs.items)}, indent=2))
    for i, it in enumerate(fs.items):
        meta = {"w_plus": np.asarray(it.w_plus, dtype=np.float32).tolist(),
                "camera": camera_to_dict(it.camera)}
        (d / f"sample_{i:03d}.json").write_text(json.dumps(meta))
        save_mask_png(it.mask, d / f"sample_{i:03d}.png",
                      class_names=list(fs.layout.class_names))
    return d


def load_fewshot(dirpath) -> FewShotSet:
    d = Path(dirpath)
    head = json.loads((d / "set.json").read_text())
    layout = LAYOUTS[head["layout"]]
    items = []
    for i in range(head["count"]):
        meta = json.loads((d / f"sample_{i:03d}.json").read_text())
        cam = camera_from_dict(meta["camera"])
        mask = load_mask_png(d / f"sample_{i:03d}.png")
        items.append(FewShotItem(w_plus=np.asarray(meta["w_plus"], np.float32),
                                 camera=cam, mask=mask))
    return FewShotSet(items=items, layout=layout)


# ----------------------------------------------------------------- training

@dataclass
class AdapterTrainConfig:
    total_steps: int = 5000
    batch: int = 4
    lambda_dice: float = 0.1
    lambda_switch: int = 4000      # dice weight is 0 before this step
    peak_lr: float = 0.03
    mix: MixSpec = None
    no_injection: bool = False
    no_lmta: bool = False
    mix_all: bool = False
    rays_per_item: int = 0         # 0 = all pixels of each mask
    log_every: int = 200

    def __post_init__(self):
        if self.mix is None:
            self.mix = MixSpec.default()
        if self.lambda_switch >= self.total_steps and self.total_steps > 0:
            raise ContractViolation("dice schedule switch must precede the end of training")


def _lambda_at(step: int, cfg: AdapterTrainConfig) -> float:
    return cfg.lambda_dice if step >= cfg.lambda_switch else 0.0


class _ItemCache:
    """Frozen per-item state: quadrature, labels, and the un-mixed pass.

    The backbone never changes during adaptation, so the un-mixed tri-plane
    and its decoded base quantities are computed once per item. Midpoint
    quadrature keeps the points fixed across steps.
    """

    def __init__(self, backbone, item: FewShotItem, cfg: Config, k_base: int):
        origins, dirs = camera_rays(item.camera)
        near, far, _ = ray_box_intersect(origins, dirs)
        pts, deltas, _ = sample_positions(origins, dirs, near, far,
                                          cfg.n_ray_samples, rng=None)
        self.n_rays, self.n_samp = pts.shape[:2]
        self.dirs, self.pts, self.deltas = dirs, pts, deltas
        self.labels = item.mask.reshape(-1)
        self.w = np.asarray(item.w_plus, dtype=np.float32)
        with no_grad():
            planes = synthesize_triplane(backbone, Tensor(self.w), cfg)
            planes_n, _, _ = normalize_triplane(planes)
            feats_n = sample_features(planes_n, pts.reshape(-1, 3))
            logits, sigma = decode_geometry(backbone, feats_n, k_base)
        self.feats_n = feats_n.data
        self.base_logits = logits.data
        self.sigma = sigma.data

    def gather(self, pick):
        """Rows of the cached per-point arrays for a ray subset."""
        rows = (pick[:, None] * self.n_samp + np.arange(self.n_samp)).reshape(-1)
        return (self.feats_n[rows], self.base_logits[rows], self.sigma[rows],
                np.repeat(self.dirs[pick], self.n_samp, axis=0),
                self.deltas[pick], self.labels[pick])


def _refined_seg(params, feats, v_d, base_logits, sigma, deltas,
                 no_injection: bool):
    """Composited target-layout probabilities for one pass of one item.

    Density comes from the frozen base head, so the quadrature weights are
    constants and gradients reach only the adapter.
    """
    n_rays, n_samp = deltas.shape
    out = adapter_forward(params, Tensor(feats), v_d, Tensor(base_logits),
                          Tensor(sigma), no_injection=no_injection)
    probs = softmax(out, axis=-1)
    k = probs.shape[-1]
    weights = composite_weights(sigma.reshape(n_rays, n_samp), deltas)
    opacity = weights.sum(axis=1)
    seg = (probs.reshape(n_rays, n_samp, k) * weights[:, :, None]).sum(axis=1)
    missed = (1.0 - opacity).reshape(n_rays, 1).astype(np.float32)
    return concat([seg[:, :1] + missed, seg[:, 1:]], axis=1)


def train_adapter(backbone_params, few_shot: FewShotSet,
                  tcfg: AdapterTrainConfig = None, seed: int = 0,
                  cfg: Config = DEFAULT, k_base: int = K_BASE):
    """Fit the adapter on a frozen backbone; returns (params, log)."""
    tcfg = tcfg or AdapterTrainConfig()
    # separate streams so ablation variants stay paired: items and rays come
    # from rng regardless of whether the augmentation stream is consumed
    rng = default_rng([seed, 0])
    rng_aug = default_rng([seed, 1])
    mix = MixSpec.all_rows(cfg, 0.5) if tcfg.mix_all else tcfg.mix
    params = init_adapter(rng, few_shot.layout, cfg,
                          no_injection=tcfg.no_injection)
    state = AdamState()
    sched = OneCycleSchedule(tcfg.peak_lr, max(tcfg.total_steps, 1))
    log = []
    caches = [_ItemCache(backbone_params, it, cfg, k_base) for it in few_shot.items]

    for step in range(tcfg.total_steps):
        lam = _lambda_at(step, tcfg)
        losses = []
        for _ in range(tcfg.batch):
            cache = caches[int(rng.integers(len(caches)))]
            if tcfg.rays_per_item and tcfg.rays_per_item < cache.n_rays:
                pick = rng.choice(cache.n_rays, size=tcfg.rays_per_item,
                                  replace=False)
            else:
                pick = np.arange(cache.n_rays)
            feats, logits, sigma, vd, deltas, labels = cache.gather(pick)
            seg = _refined_seg(params, feats, vd, logits, sigma, deltas,
                               tcfg.no_injection)
            losses.append(total_loss(seg, labels, lam))
            if not tcfg.no_lmta:
                z_new = LatentSeed.random(rng_aug)
                with no_grad():
                    w_new = mapping(backbone_params, z_new, cfg)
                    w_mix = lmta_mix(Tensor(cache.w), w_new, mix)
                    planes = synthesize_triplane(backbone_params, w_mix, cfg)
                    planes_n, _, _ = normalize_triplane(planes)
                    sub_pts = cache.pts[pick].reshape(-1, 3)
                    f_mix = sample_features(planes_n, sub_pts)
                    l_mix, s_mix = decode_geometry(backbone_params, f_mix, k_base)
                seg_mix = _refined_seg(params, f_mix.data, vd, l_mix.data,
                                       s_mix.data, deltas, tcfg.no_injection)
                losses.append(total_loss(seg_mix, labels, lam))
        loss = losses[0]
        for extra in losses[1:]:
            loss = loss + extra
        loss = loss * (1.0 / len(losses))
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"adapter loss became non-finite at step {step} (seed {seed})")
        loss.backward()
        grads = {n: p.grad for n, p in params.items() if p.grad is not None}
        adam_step(params, grads, state, onecycle_lr(step, sched))
        for p in params.values():
            p.zero_grad()
        for p in backbone_params.values():
            assert p.grad is None, "gradient leaked into the frozen backbone"
        if step % tcfg.log_every == 0 or step == tcfg.total_steps - 1:
            log.append({"step": step, "loss": value, "lambda": lam})
    return params, log
