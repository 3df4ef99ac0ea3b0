"""Neural-net building blocks on top of the Tensor primitives."""

from __future__ import annotations

import numpy as np

from planehead.errors import ContractViolation
from planehead.autodiff.tensor import Tensor


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w (+ b)`` for 2-D ``x`` of shape (N, fan_in)."""
    out = x @ w
    if b is not None:
        out = out + b
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return Tensor._from_op(out_data, (x,), vjp)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padding 2-D convolution.

    x: (C_in, H, W); w: (C_out, C_in, kh, kw) with odd kh/kw; b: (C_out,).
    """
    cin, h, wid = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ContractViolation(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    ph, pw = kh // 2, kw // 2

    if kh == 1 and kw == 1:
        cols = x.data.reshape(cin, h * wid)
    else:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
        cols = np.empty((cin, kh, kw, h, wid), dtype=x.data.dtype)
        for ki in range(kh):
            for kj in range(kw):
                cols[:, ki, kj] = xp[:, ki:ki + h, kj:kj + wid]
        cols = cols.reshape(cin * kh * kw, h * wid)

    w2 = w.data.reshape(cout, cin * kh * kw)
    out = w2 @ cols
    if b is not None:
        out = out + b.data[:, None]
    out = out.reshape(cout, h, wid)

    parents = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(cout, h * wid)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (g2 @ cols.T).reshape(w.data.shape)
        if x.requires_grad:
            gcols = w2.T @ g2
            if kh == 1 and kw == 1:
                gx = gcols.reshape(cin, h, wid)
            else:
                gcols = gcols.reshape(cin, kh, kw, h, wid)
                gxp = np.zeros((cin, h + 2 * ph, wid + 2 * pw), dtype=g.dtype)
                for ki in range(kh):
                    for kj in range(kw):
                        gxp[:, ki:ki + h, kj:kj + wid] += gcols[:, ki, kj]
                gx = gxp[:, ph:ph + h, pw:pw + wid]
        if b is None:
            return (gx, gw)
        if b.requires_grad:
            gb = g2.sum(axis=1)
        return (gx, gw, gb)

    return Tensor._from_op(out, parents, vjp)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of (C, H, W)."""
    c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return Tensor._from_op(out, (x,), vjp)


def avg_pool2x(x: Tensor) -> Tensor:
    """2x average pooling of (C, H, W) with even H and W."""
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def instance_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Standardize (C, H, W) per channel over the spatial dimensions."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    return centered / (var + eps).sqrt()


def bilinear_sample(plane: Tensor, uv) -> Tensor:
    """Sample a feature plane at continuous locations.

    plane: (C, R, R) with rows indexed by v and columns by u.
    uv: (N, 2) coordinates in [-1, 1]^2 (Tensor or array); -1 maps to index 0
    and +1 to index R-1. Out-of-range coordinates clamp to the border.
    Returns (N, C), differentiable w.r.t. both inputs.
    """
    uv_t = uv if isinstance(uv, Tensor) else Tensor(np.asarray(uv, dtype=plane.data.dtype))
    if not np.isfinite(uv_t.data).all():
        raise ContractViolation("bilinear_sample: uv contains non-finite values")
    c, r, r2 = plane.data.shape
    if r == 0 or r2 == 0:
        raise ContractViolation("bilinear_sample: empty plane")

    scale = (r - 1) / 2.0
    gx_raw = (uv_t.data[:, 0] + 1.0) * scale
    gy_raw = (uv_t.data[:, 1] + 1.0) * scale
    gx = np.clip(gx_raw, 0.0, r - 1)
    gy = np.clip(gy_raw, 0.0, r - 1)
    in_x = (gx_raw > 0.0) & (gx_raw < r - 1)
    in_y = (gy_raw > 0.0) & (gy_raw < r - 1)

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    x0 = np.minimum(x0, r - 2) if r > 1 else x0
    y0 = np.minimum(y0, r - 2) if r > 1 else y0
    fx = (gx - x0).astype(plane.data.dtype)
    fy = (gy - y0).astype(plane.data.dtype)
    x1 = np.minimum(x0 + 1, r - 1)
    y1 = np.minimum(y0 + 1, r - 1)

    flat = plane.data.reshape(c, r * r)
    i00 = y0 * r + x0
    i01 = y0 * r + x1
    i10 = y1 * r + x0
    i11 = y1 * r + x1
    p00 = flat[:, i00]
    p01 = flat[:, i01]
    p10 = flat[:, i10]
    p11 = flat[:, i11]

    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    out = (w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11).T

    def vjp(g):
        gT = g.T  # (C, N)
        gplane = None
        guv = None
        if plane.requires_grad:
            gflat = np.zeros((r * r, c), dtype=g.dtype)
            np.add.at(gflat, i00, (w00[:, None] * g))
            np.add.at(gflat, i01, (w01[:, None] * g))
            np.add.at(gflat, i10, (w10[:, None] * g))
            np.add.at(gflat, i11, (w11[:, None] * g))
            gplane = gflat.T.reshape(c, r, r)
        if uv_t.requires_grad:
            dfx = ((p01 - p00) * (1 - fy) + (p11 - p10) * fy)  # (C, N)
            dfy = ((p10 - p00) * (1 - fx) + (p11 - p01) * fx)
            du = (gT * dfx).sum(axis=0) * scale * in_x
            dv = (gT * dfy).sum(axis=0) * scale * in_y
            guv = np.stack([du, dv], axis=1).astype(uv_t.data.dtype)
        return (gplane, guv)

    return Tensor._from_op(np.ascontiguousarray(out), (plane, uv_t), vjp)
