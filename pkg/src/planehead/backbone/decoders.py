"""Per-point decoders over sampled tri-plane features.

The appearance decoder reads the raw tri-plane and emits color plus its own
density; the geometry decoder reads the normalized tri-plane and emits
base-layout logits plus the density that the renderer uses whenever the
geometry path participates.
"""

import numpy as np

from ..autodiff import Tensor, linear
from ..config import DEFAULT, Config

SLOPE = 0.2
K_BASE = 6


def _init_linear(rng, params, name, n_in, n_out):
    w = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out)).astype(np.float32)
    params[f"{name}.w"] = Tensor(w, requires_grad=True, name=f"{name}.w")
    params[f"{name}.b"] = Tensor(np.zeros(n_out, dtype=np.float32),
                                 requires_grad=True, name=f"{name}.b")


def init_decoders(rng, cfg: Config = DEFAULT, k_base: int = K_BASE):
    params = {}
    hid = cfg.decoder_hidden
    for head, n_out in (("app", 4), ("geo", k_base + 1)):
        _init_linear(rng, params, f"{head}.0", cfg.plane_channels, hid)
        _init_linear(rng, params, f"{head}.1", hid, hid)
        _init_linear(rng, params, f"{head}.2", hid, n_out)
    return params


def _head(params, name, feature):
    h = linear(feature, params[f"{name}.0.w"], params[f"{name}.0.b"]).leaky_relu(SLOPE)
    h = linear(h, params[f"{name}.1.w"], params[f"{name}.1.b"]).leaky_relu(SLOPE)
    return linear(h, params[f"{name}.2.w"], params[f"{name}.2.b"])


def decode_appearance(params, feature):
    """(N, C) raw tri-plane features -> rgb (N, 3) in [0,1], sigma (N,) >= 0."""
    out = _head(params, "app", feature)
    return out[:, :3].sigmoid(), out[:, 3].softplus()


def decode_geometry(params, feature, k_base: int = K_BASE):
    """(N, C) normalized tri-plane features -> logits (N, K_base), sigma (N,) >= 0."""
    out = _head(params, "geo", feature)
    return out[:, :k_base], out[:, k_base].softplus()
