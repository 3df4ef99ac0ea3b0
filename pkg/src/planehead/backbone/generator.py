"""Mapping network, style-modulated tri-plane synthesis, and tri-plane
normalization.

The style code has L rows; rows 1..geo_rows come from a geometry branch fed
by z_geo and the rest from an appearance branch fed by z_app, so coarse
structure and appearance are carried by disjoint row ranges by construction.
Every synthesis layer re-standardizes its activations and applies a
per-channel affine driven by its style row; the final layer emits the plane
channels directly, which makes per-channel plane normalization strip the
last appearance affine exactly.
"""

import numpy as np
from dataclasses import dataclass, field

from ..autodiff import Tensor, concat, conv2d, instance_norm, linear, upsample_nearest2x
from ..config import DEFAULT, Config
from ..errors import ContractViolation
from ..scenes import LatentSeed

SLOPE = 0.2


def _init_linear(rng, params, name, n_in, n_out, scale=1.0):
    w = rng.normal(0.0, scale / np.sqrt(n_in), (n_in, n_out)).astype(np.float32)
    params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=np.float32),
                                 requires_grad=True, name=f"{name}.b")


def _mlp(x, params, name, depth, slope=SLOPE):
    h = x
    for i in range(depth):
        h = linear(h, params[f"{name}.{i}.w"], params[f"{name}.{i}.b"])
        if i < depth - 1:
            h = h.leaky_relu(slope)
    return h


def _layer_plan(cfg: Config):
    """(out_channels, kernel, upsample_after) per synthesis layer."""
    cs, out = cfg.synth_channels, 3 * cfg.plane_channels
    plan = []
    for i in range(1, cfg.style_layers + 1):
        k = 3 if i <= cfg.geo_rows else 1
        c = out if i == cfg.style_layers else cs
        plan.append((c, k, i in (3, 6, 9)))
    return plan


def init_generator(rng, cfg: Config = DEFAULT):
    """Fresh parameter dict for mapping + synthesis."""
    params = {}
    hid = cfg.mapping_hidden
    app_rows = cfg.style_layers - cfg.geo_rows
    for branch, z_dim, rows in (("geo", cfg.z_geo_dim, cfg.geo_rows),
                                ("app", cfg.z_app_dim, app_rows)):
        _init_linear(rng, params, f"map.{branch}.0", z_dim, hid)
        _init_linear(rng, params, f"map.{branch}.1", hid, hid)
        _init_linear(rng, params, f"map.{branch}.2", hid, rows * cfg.style_dim)

    base_res = cfg.plane_res // 8
    params["syn.base"] = Tensor(
        rng.normal(0.0, 0.2, (cfg.synth_channels, base_res, base_res)).astype(np.float32),
        requires_grad=True, name="syn.base")
    c_in = cfg.synth_channels
    for i, (c_out, k, _) in enumerate(_layer_plan(cfg), start=1):
        w = rng.normal(0.0, np.sqrt(2.0 / (c_in * k * k)),
                       (c_out, c_in, k, k)).astype(np.float32)
        params[f"syn.L{i}.w"] = Tensor(w, requires_grad=True, name=f"syn.L{i}.w")
        params[f"syn.L{i}.b"] = Tensor(np.zeros(c_out, dtype=np.float32),
                                       requires_grad=True, name=f"syn.L{i}.b")
        # style affine: log-scale kept small at init so exp() starts near 1
        _init_linear(rng, params, f"syn.L{i}.ss", cfg.style_dim, c_out, scale=0.05)
        _init_linear(rng, params, f"syn.L{i}.sh", cfg.style_dim, c_out, scale=0.05)
        c_in = c_out
    return params


def mapping(params, seed: LatentSeed, cfg: Config = DEFAULT) -> Tensor:
    """Latent seed -> style code (L, D)."""
    z_geo = Tensor(np.asarray(seed.z_geo, dtype=np.float32).reshape(1, -1))
    z_app = Tensor(np.asarray(seed.z_app, dtype=np.float32).reshape(1, -1))
    rows_geo = _mlp(z_geo, params, "map.geo", 3).reshape(cfg.geo_rows, cfg.style_dim)
    app_rows = cfg.style_layers - cfg.geo_rows
    rows_app = _mlp(z_app, params, "map.app", 3).reshape(app_rows, cfg.style_dim)
    return concat([rows_geo, rows_app], axis=0)


def synthesize_triplane(params, w, cfg: Config = DEFAULT) -> Tensor:
    """Style code (L, D) -> planes (3, C, R, R), differentiable in w."""
    if w.shape[0] != cfg.style_layers:
        raise ContractViolation(f"style code has {w.shape[0]} rows, expected {cfg.style_layers}")
    x = params["syn.base"]
    for i, (c_out, _, up_after) in enumerate(_layer_plan(cfg), start=1):
        row = w[i - 1].reshape(1, cfg.style_dim)
        x = conv2d(x, params[f"syn.L{i}.w"], params[f"syn.L{i}.b"])
        x = x.leaky_relu(SLOPE)
        x = instance_norm(x)
        scale = linear(row, params[f"syn.L{i}.ss.w"], params[f"syn.L{i}.ss.b"]).exp()
        shift = linear(row, params[f"syn.L{i}.sh.w"], params[f"syn.L{i}.sh.b"])
        x = x * scale.reshape(c_out, 1, 1) + shift.reshape(c_out, 1, 1)
        if up_after:
            x = upsample_nearest2x(x)
    r = cfg.plane_res
    return x.reshape(3, cfg.plane_channels, r, r)


def plane_stats(planes):
    """Per-plane per-channel mean and std over the spatial grid.

    Works on Tensors (differentiable) and keeps the (3, C, 1, 1) layout.
    """
    mean = planes.mean(axis=(2, 3), keepdims=True)
    var = ((planes - mean) * (planes - mean)).mean(axis=(2, 3), keepdims=True)
    return mean, var.sqrt()


def normalize_triplane(planes):
    """Standardize each plane channel; returns (normalized, mean, std)."""
    mean, std = plane_stats(planes)
    return (planes - mean) / (std + 1e-6), mean, std


@dataclass
class TriPlane:
    """Value-level tri-plane with its channel statistics attached."""
    planes: np.ndarray           # (3, C, R, R)
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float32)
        if self.planes.ndim != 4 or self.planes.shape[0] != 3:
            raise ContractViolation("tri-plane must be (3, C, R, R)")
        if self.mean is None:
            m, s = plane_stats(Tensor(self.planes))
            self.mean, self.std = m.data, s.data
        else:
            self.mean = np.asarray(self.mean, dtype=np.float32)
            self.std = np.asarray(self.std, dtype=np.float32)

    def check_stats(self, tol=1e-5):
        m, s = plane_stats(Tensor(self.planes))
        if np.abs(m.data - self.mean).max() > tol or np.abs(s.data - self.std).max() > tol:
            raise ContractViolation("stored tri-plane statistics are stale")
        return self
