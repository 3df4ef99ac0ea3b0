"""Segmentation losses shared by pretraining, adaptation, and editing.

Inputs may be Tensors (differentiable) or arrays. Class images may be laid
out (K, H, W) or (P, K); targets are integer class indices, or a float
membership array matching the probability layout when per-class masks are
needed directly (the single-class dice case).
"""

import numpy as np

from .autodiff import Tensor
from .errors import ContractViolation

PROB_FLOOR = 1e-7


def _flat_probs(probs) -> Tensor:
    p = probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float32))
    if p.ndim == 3:  # (K, H, W) -> (P, K)
        k = p.shape[0]
        p = p.reshape(k, -1).transpose(1, 0)
    if p.ndim != 2:
        raise ContractViolation(f"probability image has rank {p.ndim}, expected 2 or 3")
    return p


def _membership(target, k: int, n: int) -> np.ndarray:
    t = np.asarray(target)
    if t.dtype.kind == "f":
        if t.ndim == 3:  # (K, H, W)
            t = t.reshape(t.shape[0], -1).T
        if t.shape != (n, k):
            raise ContractViolation(f"membership shape {t.shape} != ({n}, {k})")
        return t.astype(np.float32)
    idx = t.reshape(-1).astype(np.int64)
    if idx.size != n:
        raise ContractViolation(f"target has {idx.size} pixels, probabilities have {n}")
    if idx.min() < 0 or idx.max() >= k:
        raise ContractViolation(f"class index {int(idx.max())} out of range for K={k}")
    out = np.zeros((n, k), dtype=np.float32)
    out[np.arange(n), idx] = 1.0
    return out


def ce_loss(probs, target) -> Tensor:
    """Mean over pixels of -log p(true class), probabilities floored."""
    p = _flat_probs(probs)
    y = _membership(target, p.shape[1], p.shape[0])
    logp = p.clamp(PROB_FLOOR, 1.0).log()
    return -(logp * y).sum(axis=1).mean()


def dice_loss(probs, target, eps: float = 1.0) -> Tensor:
    """Soft dice, averaged over classes present in the target or in the
    prediction's argmax support."""
    if eps <= 0:
        raise ContractViolation("dice eps must be positive")
    p = _flat_probs(probs)
    k, n = p.shape[1], p.shape[0]
    y = _membership(target, k, n)
    present = y.sum(axis=0) > 0
    support = np.zeros(k, dtype=bool)
    support[np.unique(np.argmax(p.data, axis=1))] = True
    classes = np.flatnonzero(present | support)
    inter = (p * y).sum(axis=0)
    denom = p.sum(axis=0) + y.sum(axis=0)
    dice = (inter * 2.0 + eps) / (denom + eps)
    return (1.0 - dice[classes]).mean()


def total_loss(probs, target, lam: float, eps: float = 1.0) -> Tensor:
    if lam < 0:
        raise ContractViolation("loss mixing weight must be non-negative")
    ce = ce_loss(probs, target)
    if lam == 0.0:
        return ce
    return ce + dice_loss(probs, target, eps) * lam
