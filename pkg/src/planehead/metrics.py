"""Mask and tri-plane distance metrics."""

import numpy as np

from .errors import ContractViolation


def miou(a, b, k: int | None = None) -> float:
    """Mean IoU over the classes present in either mask."""
    a = np.asarray(a).astype(np.int64).reshape(-1)
    b = np.asarray(b).astype(np.int64).reshape(-1)
    if a.shape != b.shape:
        raise ContractViolation("masks differ in size")
    if k is not None and (a.max() >= k or b.max() >= k):
        raise ContractViolation(f"label out of range for K={k}")
    classes = np.union1d(np.unique(a), np.unique(b))
    total = 0.0
    for c in classes:
        in_a = a == c
        in_b = b == c
        union = np.logical_or(in_a, in_b).sum()
        inter = np.logical_and(in_a, in_b).sum()
        total += inter / union
    return float(total / classes.size)


def pixel_accuracy(a, b) -> float:
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ContractViolation("masks differ in size")
    return float(np.mean(a == b))


def l1_triplane(f_a, f_b) -> float:
    """Mean absolute difference over all plane elements."""
    a = np.asarray(getattr(f_a, "planes", f_a), dtype=np.float64)
    b = np.asarray(getattr(f_b, "planes", f_b), dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation("tri-planes differ in shape")
    return float(np.mean(np.abs(a - b)))
