"""Full and partial style transfer on tri-planes.

Full transfer re-colors a scene by giving the normalized source tri-plane
the target's per-channel statistics; geometry is untouched because the
geometry path reads the normalized planes, which the swap preserves.
Partial transfer composites the stylized render back into the source image
under a boundary-smoothed union of selected part masks.
"""

import numpy as np
from dataclasses import dataclass
from scipy.ndimage import uniform_filter

from .autodiff import Tensor, no_grad
from .backbone import render, synthesize_triplane
from .backbone.decoders import K_BASE
from .backbone.generator import TriPlane, normalize_triplane, plane_stats
from .config import DEFAULT, Config
from .errors import ContractViolation


@dataclass
class StyleStats:
    """Per-plane per-channel first and second moments of a tri-plane."""
    mean: np.ndarray   # (3, C, 1, 1)
    std: np.ndarray    # (3, C, 1, 1), strictly positive

    def __post_init__(self):
        self.mean = np.asarray(self.mean, np.float32)
        self.std = np.asarray(self.std, np.float32)
        if self.mean.shape != self.std.shape:
            raise ContractViolation("mean/std shapes differ")
        if not (self.std > 0).all():
            raise ContractViolation("std must be strictly positive")

    @classmethod
    def from_planes(cls, planes) -> "StyleStats":
        if isinstance(planes, TriPlane):
            return cls(mean=planes.mean, std=planes.std + 1e-6)
        m, s = plane_stats(Tensor(np.asarray(planes, np.float32)))
        return cls(mean=m.data, std=s.data + 1e-6)


@dataclass
class BlendSpec:
    """Which part labels get the stylized pixels and how wide the seam is."""
    labels: tuple
    width: int = 11

    def __post_init__(self):
        self.labels = tuple(int(c) for c in self.labels)
        if self.width < 1 or self.width % 2 == 0:
            raise ContractViolation("smoothing width must be odd and >= 1")


def transfer_full(source_norm, target_stats: StyleStats) -> TriPlane:
    """Denormalize a normalized tri-plane with someone else's statistics."""
    f = source_norm.planes if isinstance(source_norm, TriPlane) else source_norm
    f = np.asarray(f, np.float32)
    if f.shape[:2] != target_stats.mean.shape[:2]:
        raise ContractViolation(
            f"plane channels {f.shape[:2]} do not match stats "
            f"{target_stats.mean.shape[:2]}")
    return TriPlane(f * target_stats.std + target_stats.mean)


def smooth_w(mask, width: int) -> np.ndarray:
    """Separable box filter; exactly a linear ramp across straight edges."""
    if width < 1 or width % 2 == 0:
        raise ContractViolation("smoothing width must be odd and >= 1")
    m = np.asarray(mask, np.float64)
    if width == 1:
        return m.astype(np.float32)
    return uniform_filter(m, size=width, mode="nearest").astype(np.float32)


def partial_blend(image, stylized, masks, spec: BlendSpec) -> np.ndarray:
    """Composite stylized pixels over the source inside the selected parts.

    masks: either a labeled integer mask (H, W) or a dict label -> binary
    mask. An empty label selection returns the source image unchanged.
    """
    image = np.asarray(image, np.float32)
    stylized = np.asarray(stylized, np.float32)
    if image.shape != stylized.shape:
        raise ContractViolation("image shapes differ")
    if not spec.labels:
        return image.copy()
    hw = image.shape[-2:]
    m_add = np.zeros(hw, bool)
    if isinstance(masks, dict):
        for c in spec.labels:
            if c not in masks:
                raise ContractViolation(f"no mask for label {c}")
            part = np.asarray(masks[c])
            if part.shape != hw:
                raise ContractViolation("mask dims do not match the images")
            m_add |= part > 0
    else:
        labeled = np.asarray(masks)
        if labeled.shape != hw:
            raise ContractViolation("mask dims do not match the images")
        m_add = np.isin(labeled, spec.labels)
    m_apply = smooth_w(m_add.astype(np.float64), spec.width)
    return (m_apply * stylized + (1.0 - m_apply) * image).astype(np.float32)


def style_triplet(params, w_source, w_style, camera, labels=(), *,
                  width: int = 11, seg_head=None, k_base: int = K_BASE,
                  cfg: Config = DEFAULT) -> dict:
    """Source render, full transfer, and partial transfer in one pass.

    Geometry (and therefore the part masks) comes from the normalized
    source planes in all three images; only appearance statistics move.
    """
    with no_grad():
        planes_src = synthesize_triplane(params, Tensor(np.asarray(w_source, np.float32)), cfg)
        planes_sty = synthesize_triplane(params, Tensor(np.asarray(w_style, np.float32)), cfg)
        f_norm, _, _ = normalize_triplane(planes_src)
    stats = StyleStats.from_planes(TriPlane(planes_sty.data))
    transferred = transfer_full(f_norm.data, stats)
    src = render(params, planes_src.data, camera, seg_head=seg_head,
                 k_base=k_base, cfg=cfg)
    full = render(params, transferred.planes, camera, seg_head=seg_head,
                  k_base=k_base, cfg=cfg)
    partial = partial_blend(src.rgb, full.rgb, src.mask,
                            BlendSpec(labels=tuple(labels), width=width))
    return {"source": src, "full": full, "partial": partial,
            "stats": stats, "planes": transferred}
