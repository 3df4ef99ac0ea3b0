"""Procedural blob-head scene family.

A deterministic map from latent seeds to parametric head scenes with exact
density, color, and multi-layout segmentation labels at any 3D point. Serves
as both the training corpus and the labeling oracle for everything else.
"""

import json
import numpy as np
from dataclasses import dataclass, fields

from scipy.special import expit, logsumexp

from .config import DEFAULT
from .errors import ContractViolation
from .rays import Camera, camera_rays, composite_weights, ray_box_intersect, sample_positions

# fine (un-collapsed) class indices; layouts are views onto these
FINE_NAMES = (
    "background", "skin", "eye", "iris", "pupil", "nose", "nostril",
    "bridge", "mouth", "lips", "teeth", "chin", "hair",
)
BG, SKIN, EYE, IRIS, PUPIL, NOSE, NOSTRIL, BRIDGE, MOUTH, LIPS, TEETH, CHIN, HAIR = range(13)

_SMIN_BETA = 10.0   # smooth-union sharpness
_OWN_MARGIN = 0.25  # the sigmoid density shell around a surface still
                    # belongs to its nearest primitive, not to background


@dataclass
class LayoutSpec:
    name: str
    class_names: tuple
    fine_to_class: np.ndarray  # (13,) fine index -> layout class
    class_to_base: np.ndarray  # (K,) layout class -> base class

    def __post_init__(self):
        self.fine_to_class = np.asarray(self.fine_to_class, dtype=np.int64)
        self.class_to_base = np.asarray(self.class_to_base, dtype=np.int64)
        k = len(self.class_names)
        if sorted(set(self.fine_to_class.tolist())) != list(range(k)):
            raise ContractViolation(f"layout {self.name}: classes not contiguous from 0")
        if self.class_to_base.shape != (k,) or self.class_to_base[0] != 0:
            raise ContractViolation(f"layout {self.name}: bad refinement map")

    @property
    def n_classes(self):
        return len(self.class_names)

    @property
    def fine_to_base(self):
        return self.class_to_base[self.fine_to_class]


_BASE_NAMES = ("background", "skin", "eye", "nose", "mouth", "hair")

LAYOUTS = {
    "base": LayoutSpec(
        "base", _BASE_NAMES,
        [0, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 1, 5],
        [0, 1, 2, 3, 4, 5],
    ),
    "eyes": LayoutSpec(
        "eyes", _BASE_NAMES + ("iris", "pupil"),
        [0, 1, 2, 6, 7, 3, 3, 3, 4, 4, 4, 1, 5],
        [0, 1, 2, 3, 4, 5, 2, 2],
    ),
    "nose": LayoutSpec(
        "nose", _BASE_NAMES + ("nostril", "bridge"),
        [0, 1, 2, 2, 2, 3, 6, 7, 4, 4, 4, 1, 5],
        [0, 1, 2, 3, 4, 5, 3, 3],
    ),
    "mouth": LayoutSpec(
        "mouth", _BASE_NAMES + ("lips", "teeth", "chin"),
        [0, 1, 2, 2, 2, 3, 3, 3, 4, 6, 7, 8, 5],
        [0, 1, 2, 3, 4, 5, 4, 4, 1],
    ),
}


def collapse_mask(mask, layout: LayoutSpec):
    return layout.class_to_base[mask]


@dataclass
class LatentSeed:
    z_geo: np.ndarray
    z_app: np.ndarray

    def __post_init__(self):
        self.z_geo = np.asarray(self.z_geo, dtype=np.float32)
        self.z_app = np.asarray(self.z_app, dtype=np.float32)
        if self.z_geo.shape != (DEFAULT.z_geo_dim,) or self.z_app.shape != (DEFAULT.z_app_dim,):
            raise ContractViolation("latent seed dimensions do not match config")

    @classmethod
    def random(cls, rng):
        return cls(rng.standard_normal(DEFAULT.z_geo_dim),
                   rng.standard_normal(DEFAULT.z_app_dim))

    @classmethod
    def zeros(cls):
        return cls(np.zeros(DEFAULT.z_geo_dim), np.zeros(DEFAULT.z_app_dim))


@dataclass
class SceneSpec:
    head_center: np.ndarray
    head_radii: np.ndarray
    eye_centers: np.ndarray   # (2, 3), x-mirrored pair
    eye_radii: np.ndarray     # (2,)
    iris_radii: np.ndarray    # (2,) transverse radius of the iris disc
    pupil_radii: np.ndarray   # (2,)
    nose_center: np.ndarray
    nose_size: np.ndarray     # ellipsoid half-extents
    nostril_offsets: np.ndarray  # (2, 3) relative to nose center
    nostril_size: float
    mouth_center: np.ndarray
    mouth_size: np.ndarray
    lip_band: float           # lip shell thickness, relative to mouth size
    hair_height: float        # hair cap starts above this y
    colors: np.ndarray        # (13, 3) per-fine-class base RGB in [0,1]

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("nostril_size", "lip_band", "hair_height"):
                setattr(self, f.name, float(v))
            else:
                setattr(self, f.name, np.asarray(v, dtype=np.float64))

    def validate(self):
        radii = np.concatenate([self.head_radii, self.eye_radii, self.iris_radii,
                                self.pupil_radii, self.nose_size, self.mouth_size,
                                [self.nostril_size]])
        if not (radii > 0).all():
            raise ContractViolation("scene has non-positive radii")
        for c in (*self.eye_centers, self.nose_center, self.mouth_center):
            q = np.sum(((c - self.head_center) / self.head_radii) ** 2)
            if q >= 1.0:
                raise ContractViolation("feature center outside head ellipsoid")
        return self

    def to_json(self):
        doc = {}
        for f in fields(self):
            v = getattr(self, f.name)
            doc[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text)).validate()


# fixed seeded affine-squash maps from latent to parameters; evaluating at
# z = 0 lands every parameter at the center of its range
_GEN = np.random.default_rng(701)
_GEO_RANGES = np.array([
    (0.45, 0.65),   # 0  head rx
    (0.55, 0.75),   # 1  head ry
    (0.45, 0.65),   # 2  head rz
    (0.19, 0.27),   # 3  eye |x|
    (0.10, 0.20),   # 4  eye y
    (0.88, 0.98),   # 5  eye forward placement factor
    (0.09, 0.13),   # 6  eye radius
    (0.45, 0.65),   # 7  iris radius / eye radius
    (0.40, 0.60),   # 8  pupil radius / iris radius
    (-0.12, -0.02), # 9  nose y
    (0.88, 0.98),   # 10 nose forward placement factor
    (0.05, 0.09),   # 11 nose half-width
    (0.09, 0.15),   # 12 nose half-height
    (0.08, 0.14),   # 13 nose half-depth
    (0.025, 0.040), # 14 nostril |x| offset
    (0.018, 0.028), # 15 nostril radius
    (-0.35, -0.25), # 16 mouth y
    (0.87, 0.95),   # 17 mouth forward placement factor
    (0.14, 0.22),   # 18 mouth half-width
    (0.04, 0.07),   # 19 mouth half-height
    (0.05, 0.09),   # 20 mouth half-depth
    (0.25, 0.45),   # 21 lip band
    (0.15, 0.30),   # 22 hair height
])
_A_GEO = _GEN.normal(0.0, 0.35 / np.sqrt(DEFAULT.z_geo_dim), (len(_GEO_RANGES), DEFAULT.z_geo_dim))
_A_APP = _GEN.normal(0.0, 0.5 / np.sqrt(DEFAULT.z_app_dim), (39, DEFAULT.z_app_dim))

_COLOR_ANCHORS = np.array([
    (0.06, 0.06, 0.08),  # background
    (0.78, 0.62, 0.52),  # skin
    (0.90, 0.90, 0.88),  # eye white
    (0.35, 0.50, 0.65),  # iris
    (0.10, 0.10, 0.12),  # pupil
    (0.75, 0.58, 0.48),  # nose
    (0.15, 0.11, 0.10),  # nostril
    (0.80, 0.66, 0.56),  # bridge
    (0.55, 0.20, 0.22),  # mouth
    (0.74, 0.30, 0.34),  # lips
    (0.88, 0.86, 0.80),  # teeth
    (0.72, 0.56, 0.48),  # chin
    (0.22, 0.16, 0.12),  # hair
])
_COLOR_AMP = np.minimum(0.12, np.minimum(_COLOR_ANCHORS, 1.0 - _COLOR_ANCHORS))


def scene_from_latent(seed: LatentSeed) -> SceneSpec:
    lo, hi = _GEO_RANGES[:, 0], _GEO_RANGES[:, 1]
    g = lo + (hi - lo) * (np.tanh(_A_GEO @ seed.z_geo.astype(np.float64)) + 1.0) / 2.0
    rx, ry, rz = g[0], g[1], g[2]

    ex, ey, ef, re = g[3], g[4], g[5], g[6]
    ez = ef * rz * np.sqrt(1.0 - (ex / rx) ** 2 - (ey / ry) ** 2)
    ri = g[7] * re
    rp = g[8] * ri

    ny, nf = g[9], g[10]
    nz = nf * rz * np.sqrt(1.0 - (ny / ry) ** 2)
    nw, nh, nd = g[11], g[12], g[13]
    ndx, nr = g[14], g[15]

    my, mf = g[16], g[17]
    mz = mf * rz * np.sqrt(1.0 - (my / ry) ** 2)

    cv = np.tanh(_A_APP @ seed.z_app.astype(np.float64)).reshape(13, 3)
    return SceneSpec(
        head_center=np.zeros(3),
        head_radii=(rx, ry, rz),
        eye_centers=((-ex, ey, ez), (ex, ey, ez)),
        eye_radii=(re, re),
        iris_radii=(ri, ri),
        pupil_radii=(rp, rp),
        nose_center=(0.0, ny, nz),
        nose_size=(nw, nh, nd),
        nostril_offsets=((-ndx, -0.7 * nh, 0.5 * nd), (ndx, -0.7 * nh, 0.5 * nd)),
        nostril_size=nr,
        mouth_center=(0.0, my, mz),
        mouth_size=(g[18], g[19], g[20]),
        lip_band=g[21],
        hair_height=g[22],
        colors=_COLOR_ANCHORS + _COLOR_AMP * cv,
    ).validate()


def _ellipsoid_norm(p, center, radii):
    return np.sqrt(np.sum(((p - center) / radii) ** 2, axis=-1))


def _ellipsoid_dist(p, center, radii):
    # k0*(k0-1)/k1 distance estimate; exact enough for ownership votes
    rel = p - center
    k0 = np.sqrt(np.sum((rel / radii) ** 2, axis=-1))
    k1 = np.sqrt(np.sum((rel / radii**2) ** 2, axis=-1))
    return np.where(k1 > 1e-12, k0 * (k0 - 1.0) / np.maximum(k1, 1e-12), -radii.min())


def _primitive_dists(spec: SceneSpec, p):
    ds = [_ellipsoid_dist(p, spec.head_center, spec.head_radii)]
    for i in range(2):
        ds.append(np.linalg.norm(p - spec.eye_centers[i], axis=-1) - spec.eye_radii[i])
    ds.append(_ellipsoid_dist(p, spec.nose_center, spec.nose_size))
    return np.stack(ds, axis=0)  # order: head, eye left, eye right, nose


def _scene_sdf(spec: SceneSpec, p):
    return -logsumexp(-_SMIN_BETA * _primitive_dists(spec, p), axis=0) / _SMIN_BETA


def _fine_class(spec: SceneSpec, p):
    """Fine class per point: ownership by the containing primitive (eyes
    over nose over head on overlap) or, within a margin shell, the nearest
    one; sub-regions are painted with transverse tests so the density shell
    above a feature carries the feature's class."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]

    dists = _primitive_dists(spec, p)  # owner ids: 0 head, 1/2 eyes, 3 nose

    owner = np.full(p.shape[:-1], -1, dtype=np.int64)
    for idx in (1, 2, 3, 0):  # containment priority: eyes, nose, head
        owner = np.where((owner < 0) & (dists[idx] < 0.0), idx, owner)
    nearest = np.argmin(dists, axis=0)
    shell = (owner < 0) & (dists.min(axis=0) <= _OWN_MARGIN)
    owner = np.where(shell, nearest, owner)

    cls = np.zeros(p.shape[:-1], dtype=np.int64)

    for i in range(2):
        sel = owner == i + 1
        c = spec.eye_centers[i]
        rho = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2)
        front = z >= c[2]
        cls[sel] = EYE
        cls[sel & front & (rho <= spec.iris_radii[i])] = IRIS
        cls[sel & front & (rho <= spec.pupil_radii[i])] = PUPIL

    nose = owner == 3
    cls[nose] = NOSE
    cls[nose & (y - spec.nose_center[1] >= 0.35 * spec.nose_size[1])] = BRIDGE
    for i in range(2):
        c = spec.nose_center + spec.nostril_offsets[i]
        rho = np.sqrt((x - c[0]) ** 2 + (y - c[1]) ** 2)
        cls[nose & (rho <= spec.nostril_size) & (z >= spec.nose_center[2])] = NOSTRIL

    head = owner == 0
    cls[head] = SKIN
    chin_r = 0.8 * spec.mouth_size[0]
    mc, ms = spec.mouth_center, spec.mouth_size
    chin_c = np.array([mc[0], mc[1] - 2.2 * ms[1] - 0.4 * chin_r, mc[2]])
    cls[head & (np.linalg.norm(p - chin_c, axis=-1) <= chin_r)] = CHIN
    cls[head & (y >= spec.hair_height)] = HAIR
    # mouth family: transverse print on the face; open-ended toward the
    # camera so the density shell in front of the lips keeps their class
    mu = np.sqrt(((x - mc[0]) / ms[0]) ** 2 + ((y - mc[1]) / ms[1]) ** 2)
    in_slab = head & (z - mc[2] >= -2.0 * ms[2])
    cls[in_slab & (mu <= 1.0 + spec.lip_band)] = LIPS
    cls[in_slab & (mu <= 1.0)] = MOUTH
    cls[in_slab & (mu <= 0.45)] = TEETH
    return cls


def query_point(spec: SceneSpec, p, layout: LayoutSpec = None):
    """Exact field lookup: (density, rgb, class index) at 3D points.

    `p` is (..., 3); classes come back in `layout` indices (fine indices
    when layout is None).
    """
    p = np.asarray(p, dtype=np.float64)
    if not np.isfinite(p).all():
        raise ContractViolation("query_point requires finite coordinates")
    sdf = _scene_sdf(spec, p)
    sigma = DEFAULT.density_scale * expit(-DEFAULT.sdf_sharpness * sdf)
    fine = _fine_class(spec, p)
    rgb = spec.colors[fine]
    cls = fine if layout is None else layout.fine_to_class[fine]
    return sigma, rgb, cls


@dataclass
class GroundTruth:
    rgb: np.ndarray   # (3, H, W) in [0,1]
    mask: np.ndarray  # (H, W) layout class indices
    seg: np.ndarray   # (K, H, W) composited class probabilities


def composite_ground_truth(spec: SceneSpec, pts, deltas, layout: LayoutSpec):
    """Exact-field compositing along given sample points.

    pts is (rays, n, 3) with matching deltas. Returns per-ray rgb (rays, 3),
    seg (rays, K), hard mask (rays,), and the raw density at every sample
    (rays, n). The hard mask is chosen hierarchically: argmax over base
    classes first, then the best refined class within the winner, which
    keeps refined and base masks consistent under collapsing.
    """
    n_rays, n = pts.shape[0], pts.shape[1]
    sigma, rgb_pts, fine = query_point(spec, pts.reshape(-1, 3))
    sigma = sigma.reshape(n_rays, n)
    w = composite_weights(sigma, deltas)

    rgb = np.einsum("rn,rnc->rc", w, rgb_pts.reshape(n_rays, n, 3))
    seg_fine = np.zeros((n_rays, 13))
    np.add.at(seg_fine, (np.repeat(np.arange(n_rays), n), fine), w.reshape(-1))
    seg_fine[:, BG] += 1.0 - w.sum(axis=1)

    k = layout.n_classes
    seg = np.zeros((n_rays, k))
    np.add.at(seg.T, layout.fine_to_class, seg_fine.T)
    # base probabilities summed straight from fine values so every layout
    # sees bit-identical numbers
    base = np.zeros((n_rays, 6))
    np.add.at(base.T, layout.fine_to_base, seg_fine.T)
    base_idx = np.argmax(base, axis=1)
    in_winner = layout.class_to_base[None, :] == base_idx[:, None]
    mask = np.argmax(np.where(in_winner, seg, -1.0), axis=1)
    return rgb, seg, mask, sigma


def ground_truth_render(spec: SceneSpec, camera: Camera, layout: LayoutSpec,
                        n_samples: int = None, rng=None) -> GroundTruth:
    """Reference volumetric render of the exact fields, same quadrature as
    the neural renderer."""
    n = n_samples or DEFAULT.n_ray_samples
    origins, dirs = camera_rays(camera)
    near, far, _ = ray_box_intersect(origins, dirs)
    pts, deltas, _ = sample_positions(origins, dirs, near, far, n, rng=rng)
    rgb, seg, mask, _ = composite_ground_truth(spec, pts, deltas, layout)

    h, wd = camera.height, camera.width
    return GroundTruth(
        rgb=rgb.T.reshape(3, h, wd).astype(np.float32),
        mask=mask.reshape(h, wd).astype(np.uint8),
        seg=seg.T.reshape(layout.n_classes, h, wd).astype(np.float32),
    )
