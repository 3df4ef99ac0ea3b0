from planehead.autodiff.tensor import Tensor, as_tensor, concat, no_grad, stack
from planehead.autodiff.ops import (
    avg_pool2x,
    bilinear_sample,
    conv2d,
    instance_norm,
    linear,
    softmax,
    upsample_nearest2x,
)
from planehead.autodiff.optim import AdamState, OneCycleSchedule, adam_step, onecycle_lr

__all__ = [
    "Tensor", "as_tensor", "concat", "no_grad", "stack",
    "avg_pool2x", "bilinear_sample", "conv2d", "instance_norm", "linear",
    "softmax", "upsample_nearest2x",
    "AdamState", "OneCycleSchedule", "adam_step", "onecycle_lr",
]
