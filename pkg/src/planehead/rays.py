"""Camera model and ray quadrature shared by the ground-truth field renderer
and the neural renderer, so both integrate over identical sample points."""

import numpy as np
from dataclasses import dataclass

BOX_LO = -1.0
BOX_HI = 1.0


@dataclass
class Camera:
    yaw: float = 0.0  # radians, orbit around +y
    pitch: float = 0.0
    distance: float = 1.9
    fov_deg: float = 35.0
    width: int = 64
    height: int = 64
    target: tuple = (0.0, 0.0, 0.0)


def camera_to_dict(cam: Camera) -> dict:
    return {"yaw": cam.yaw, "pitch": cam.pitch, "distance": cam.distance,
            "fov_deg": cam.fov_deg, "width": cam.width, "height": cam.height,
            "target": list(cam.target)}


def camera_from_dict(d: dict) -> Camera:
    return Camera(yaw=d["yaw"], pitch=d["pitch"], distance=d["distance"],
                  fov_deg=d["fov_deg"], width=d["width"], height=d["height"],
                  target=tuple(d["target"]))


def camera_position(cam: Camera):
    cy, sy = np.cos(cam.yaw), np.sin(cam.yaw)
    cp, sp = np.cos(cam.pitch), np.sin(cam.pitch)
    orbit = cam.distance * np.array([sy * cp, sp, cy * cp], dtype=np.float64)
    return np.asarray(cam.target, dtype=np.float64) + orbit


def camera_rays(cam: Camera):
    """Per-pixel rays looking at the target, row-major, y-up image frame.

    Returns (origins, dirs) with shape (H*W, 3) each, unit directions.
    """
    eye = camera_position(cam)
    fwd = np.asarray(cam.target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right = right / np.linalg.norm(right)
    upv = np.cross(right, fwd)

    h, w = cam.height, cam.width
    tan_half = np.tan(np.deg2rad(cam.fov_deg) / 2)
    aspect = w / h
    us = ((np.arange(w) + 0.5) / w * 2 - 1) * tan_half * aspect
    vs = (1 - (np.arange(h) + 0.5) / h * 2) * tan_half
    uu, vv = np.meshgrid(us, vs)
    dirs = fwd[None, :] + uu.reshape(-1, 1) * right[None, :] + vv.reshape(-1, 1) * upv[None, :]
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(eye, dirs.shape).copy()
    return origins.astype(np.float32), dirs.astype(np.float32)


def ray_box_intersect(origins, dirs, lo=BOX_LO, hi=BOX_HI):
    """Slab test. Returns (near, far, hit); near clamped to 0, and for
    missing rays near = far = 0 so downstream weights vanish."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # rays parallel to a slab: inside -> +-inf straddles fine, outside -> miss
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    near = tmin.max(axis=-1)
    far = tmax.min(axis=-1)
    near = np.maximum(near, 0.0)
    hit = far > near
    near = np.where(hit, near, 0.0)
    far = np.where(hit, far, 0.0)
    return near.astype(np.float32), far.astype(np.float32), hit


def sample_positions(origins, dirs, near, far, n, rng=None):
    """n samples per ray in [near, far]: stratified when rng is given,
    bin midpoints otherwise (deterministic renders mirror cleanly).

    Returns (points (rays, n, 3), deltas (rays, n), t (rays, n)).
    """
    rays = origins.shape[0]
    span = (far - near)[:, None]
    edges = np.arange(n, dtype=np.float32)[None, :] / n
    if rng is None:
        offs = np.full((rays, n), 0.5, dtype=np.float32)
    else:
        offs = rng.uniform(0.0, 1.0, size=(rays, n)).astype(np.float32)
    t = near[:, None] + span * (edges + offs / n)
    deltas = np.empty_like(t)
    deltas[:, :-1] = t[:, 1:] - t[:, :-1]
    deltas[:, -1] = far - t[:, -1]
    points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    return points.astype(np.float32), deltas.astype(np.float32), t.astype(np.float32)


def composite_weights(sigma, deltas):
    """w_i = T_i * (1 - exp(-sigma_i * delta_i)) with exclusive transmittance.

    Plain-array version; the differentiable renderer repeats the same
    formula with autodiff primitives.
    """
    tau = sigma * deltas
    alpha = 1.0 - np.exp(-tau)
    acc = np.cumsum(tau, axis=-1)
    trans = np.exp(-(acc - tau))  # exclusive cumulative sum
    return trans * alpha
