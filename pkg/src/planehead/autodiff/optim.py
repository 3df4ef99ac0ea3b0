"""Adam with bias correction and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from planehead.errors import ContractViolation, NanGradient
from planehead.autodiff.tensor import Tensor


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators and a step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update, in place. Deterministic given inputs."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if np.isnan(g).any():
            raise NanGradient(f"NaN gradient in parameter '{name}' at step {t}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
    return params, state


@dataclass
class OneCycleSchedule:
    """Cosine warmup to ``max_lr`` at ``pct_up`` of the run, cosine decay after.

    The rate starts at max_lr / div_factor and ends at max_lr / final_div_factor.
    """

    max_lr: float
    total_steps: int
    pct_up: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4


def onecycle_lr(step: float, schedule: OneCycleSchedule) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ContractViolation(
            f"step {step} outside [0, {schedule.total_steps}]"
        )
    up = schedule.pct_up * schedule.total_steps
    start = schedule.max_lr / schedule.div_factor
    end = schedule.max_lr / schedule.final_div_factor
    if step <= up:
        t = step / up if up > 0 else 1.0
        return start + (schedule.max_lr - start) * 0.5 * (1.0 - math.cos(math.pi * t))
    t = (step - up) / (schedule.total_steps - up)
    return end + (schedule.max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * t))
