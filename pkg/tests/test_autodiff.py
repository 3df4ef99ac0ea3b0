import numpy as np
import pytest

from planehead.autodiff import (
    AdamState,
    OneCycleSchedule,
    Tensor,
    adam_step,
    avg_pool2x,
    bilinear_sample,
    concat,
    conv2d,
    instance_norm,
    linear,
    no_grad,
    onecycle_lr,
    softmax,
    stack,
    upsample_nearest2x,
)
from planehead.errors import ContractViolation, NanGradient

from gradcheck import check_gradients

N_INSTANCES = 20


def rng_for(seed):
    return np.random.default_rng(seed)


def rand(rng, *shape, lo=-1.5, hi=1.5, avoid_zero=False):
    x = rng.uniform(lo, hi, size=shape)
    if avoid_zero:
        x = np.where(np.abs(x) < 0.1, np.sign(x) * 0.1 + x, x)
    return x


def rand_off_kinks(rng, *shape, kinks=(-1.0, 1.0), margin=0.05):
    # finite differences are invalid within h of a non-smooth point
    x = rng.uniform(-2.0, 2.0, size=shape)
    for k in kinks:
        near = np.abs(x - k) < margin
        x = np.where(near, k + np.sign(x - k + 1e-12) * margin * 2, x)
    return x


# ---------------------------------------------------------------------------
# finite-difference suite, one parametrized case per differentiable op
# ---------------------------------------------------------------------------

ELEMENTWISE = {
    "add": (lambda t: (t["a"] + t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 4)}),
    "add_broadcast": (lambda t: (t["a"] + t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 4)}),
    "sub": (lambda t: (t["a"] - t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 4)}),
    "mul": (lambda t: (t["a"] * t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 4)}),
    "div": (lambda t: (t["a"] / t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 4, lo=0.5, hi=2.0)}),
    "neg": (lambda t: (-t["a"] * t["a"]).sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "pow": (lambda t: (t["a"] ** 3).sum(), lambda rng: {"a": rand(rng, 3, 4, avoid_zero=True)}),
    "matmul": (lambda t: (t["a"] @ t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 4, 2)}),
    "exp": (lambda t: t["a"].exp().sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "log": (lambda t: t["a"].log().sum(), lambda rng: {"a": rand(rng, 3, 4, lo=0.2, hi=2.0)}),
    "sqrt": (lambda t: t["a"].sqrt().sum(), lambda rng: {"a": rand(rng, 3, 4, lo=0.2, hi=2.0)}),
    "abs": (lambda t: t["a"].abs().sum(), lambda rng: {"a": rand(rng, 3, 4, avoid_zero=True)}),
    "sigmoid": (lambda t: (t["a"].sigmoid() * t["a"]).sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "tanh": (lambda t: t["a"].tanh().sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "softplus": (lambda t: t["a"].softplus().sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "relu": (lambda t: (t["a"].relu() * t["a"]).sum(), lambda rng: {"a": rand(rng, 3, 4, avoid_zero=True)}),
    "leaky_relu": (lambda t: t["a"].leaky_relu(0.2).sum(), lambda rng: {"a": rand(rng, 3, 4, avoid_zero=True)}),
    "clamp": (lambda t: (t["a"].clamp(-1.0, 1.0) * t["a"]).sum(), lambda rng: {"a": rand_off_kinks(rng, 3, 4)}),
    "sum_axis": (lambda t: (t["a"].sum(axis=1) ** 2).sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "mean_axis": (lambda t: (t["a"].mean(axis=(0, 2)) ** 2).sum(), lambda rng: {"a": rand(rng, 2, 3, 4)}),
    "cumsum": (lambda t: (t["a"].cumsum(axis=1) * t["a"]).sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "reshape": (lambda t: (t["a"].reshape(4, 3) @ t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 2)}),
    "transpose": (lambda t: (t["a"].transpose(1, 0) * t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 4, 3)}),
    "getitem": (lambda t: (t["a"][1:, :2] ** 2).sum(), lambda rng: {"a": rand(rng, 3, 4)}),
    "concat": (lambda t: (concat([t["a"], t["b"]], axis=1) ** 2).sum(), lambda rng: {"a": rand(rng, 3, 2), "b": rand(rng, 3, 4)}),
    "stack": (lambda t: (stack([t["a"], t["b"]], axis=0) ** 2).sum(), lambda rng: {"a": rand(rng, 3, 2), "b": rand(rng, 3, 2)}),
    "softmax": (lambda t: (softmax(t["a"], axis=1) * t["b"]).sum(), lambda rng: {"a": rand(rng, 3, 4), "b": rand(rng, 3, 4)}),
    "linear": (lambda t: linear(t["x"], t["w"], t["b"]).tanh().sum(), lambda rng: {"x": rand(rng, 5, 3), "w": rand(rng, 3, 4), "b": rand(rng, 4)}),
    "conv3x3": (lambda t: (conv2d(t["x"], t["w"], t["b"]) ** 2).sum(), lambda rng: {"x": rand(rng, 2, 4, 4), "w": rand(rng, 3, 2, 3, 3) * 0.5, "b": rand(rng, 3)}),
    "conv1x1": (lambda t: (conv2d(t["x"], t["w"], t["b"]) ** 2).sum(), lambda rng: {"x": rand(rng, 2, 4, 4), "w": rand(rng, 3, 2, 1, 1), "b": rand(rng, 3)}),
    "upsample": (lambda t: (upsample_nearest2x(t["x"]) * t["y"]).sum(), lambda rng: {"x": rand(rng, 2, 3, 3), "y": rand(rng, 2, 6, 6)}),
    "avg_pool": (lambda t: (avg_pool2x(t["x"]) ** 2).sum(), lambda rng: {"x": rand(rng, 2, 4, 4)}),
    "instance_norm": (lambda t: (instance_norm(t["x"]) * t["y"]).sum(), lambda rng: {"x": rand(rng, 2, 3, 3), "y": rand(rng, 2, 3, 3)}),
}


def _uv_inside(rng, n, r):
    # keep fractional grid position away from cell boundaries where the
    # interpolant is only C0 and the stencil is invalid
    cell = rng.integers(0, r - 1, size=(n, 2))
    frac = rng.uniform(0.15, 0.85, size=(n, 2))
    return (cell + frac) / (r - 1) * 2.0 - 1.0


ELEMENTWISE["bilinear_plane_uv"] = (
    lambda t: (bilinear_sample(t["plane"], t["uv"]) ** 2).sum(),
    lambda rng: {"plane": rand(rng, 2, 4, 4), "uv": _uv_inside(rng, 5, 4)},
)


@pytest.mark.parametrize("op_name", sorted(ELEMENTWISE))
def test_gradients_match_finite_differences(op_name):
    build, make_inputs = ELEMENTWISE[op_name]
    for seed in range(N_INSTANCES):
        inputs = make_inputs(rng_for(hash(op_name) % 10_000 + seed))
        check_gradients(build, inputs)


def test_mlp_gradients_match_finite_differences():
    # three-layer perceptron on 8 inputs, as a composite end-to-end check
    def build(t):
        h1 = linear(t["x"], t["w1"], t["b1"]).tanh()
        h2 = linear(h1, t["w2"], t["b2"]).leaky_relu(0.1)
        out = linear(h2, t["w3"], t["b3"])
        return (out * out).sum()

    for seed in range(5):
        rng = rng_for(100 + seed)
        inputs = {
            "x": rand(rng, 4, 8), "w1": rand(rng, 8, 6) * 0.5, "b1": rand(rng, 6),
            "w2": rand(rng, 6, 5) * 0.5, "b2": rand(rng, 5),
            "w3": rand(rng, 5, 3) * 0.5, "b3": rand(rng, 3),
        }
        check_gradients(build, inputs)


# ---------------------------------------------------------------------------
# backward contract
# ---------------------------------------------------------------------------

def test_backward_square_sum():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_constant_loss_gives_zero_grad():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * 0.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 0.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractViolation):
        (x * x).backward()


def test_backward_accumulates_through_shared_nodes():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_no_grad_blocks_recording():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad


# ---------------------------------------------------------------------------
# bilinear sampling values
# ---------------------------------------------------------------------------

def test_bilinear_at_grid_node_returns_node_value():
    rng = rng_for(0)
    plane = Tensor(rng.normal(size=(3, 5, 5)).astype(np.float32))
    # node (row 2, col 3) maps to uv = (2*3/4-1, 2*2/4-1)
    uv = np.array([[2 * 3 / 4 - 1, 2 * 2 / 4 - 1]])
    out = bilinear_sample(plane, uv)
    np.testing.assert_allclose(out.data[0], plane.data[:, 2, 3], rtol=1e-6)


def test_bilinear_midpoint_averages_four_nodes():
    plane = np.zeros((2, 2, 2), dtype=np.float32)
    plane[:, 1, 0] = 4.0
    plane[:, 1, 1] = 4.0
    out = bilinear_sample(Tensor(plane), np.array([[0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [[2.0, 2.0]])


def test_bilinear_matches_closed_form():
    rng = rng_for(7)
    plane_np = rng.normal(size=(4, 8, 8))
    u, v = 0.3, -0.7
    r = 8
    gx, gy = (u + 1) / 2 * (r - 1), (v + 1) / 2 * (r - 1)
    x0, y0 = int(np.floor(gx)), int(np.floor(gy))
    fx, fy = gx - x0, gy - y0
    expected = (
        plane_np[:, y0, x0] * (1 - fx) * (1 - fy)
        + plane_np[:, y0, x0 + 1] * fx * (1 - fy)
        + plane_np[:, y0 + 1, x0] * (1 - fx) * fy
        + plane_np[:, y0 + 1, x0 + 1] * fx * fy
    )
    out = bilinear_sample(Tensor(plane_np, dtype=np.float64), np.array([[u, v]]))
    np.testing.assert_allclose(out.data[0], expected, rtol=1e-6)


def test_bilinear_out_of_range_clamps_to_border():
    rng = rng_for(9)
    plane = Tensor(rng.normal(size=(2, 4, 4)).astype(np.float32))
    out = bilinear_sample(plane, np.array([[-3.0, 0.0], [3.0, 3.0]]))
    left_mid = bilinear_sample(plane, np.array([[-1.0, 0.0]]))
    np.testing.assert_allclose(out.data[0], left_mid.data[0], rtol=1e-6)
    np.testing.assert_allclose(out.data[1], plane.data[:, 3, 3], rtol=1e-6)


def test_bilinear_rejects_non_finite_uv():
    plane = Tensor(np.zeros((1, 4, 4), dtype=np.float32))
    with pytest.raises(ContractViolation):
        bilinear_sample(plane, np.array([[np.nan, 0.0]]))


# ---------------------------------------------------------------------------
# softmax invariants
# ---------------------------------------------------------------------------

def test_softmax_rows_are_distributions():
    rng = rng_for(3)
    for _ in range(50):
        x = Tensor(rng.normal(scale=5.0, size=(6, 9)).astype(np.float32))
        s = softmax(x, axis=1).data
        assert (s >= 0).all()
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
    before = p.data.copy()
    adam_step({"p": p}, {"p": np.zeros(2, dtype=np.float32)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_unit_gradient_first_step_moves_by_lr():
    p = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
    adam_step({"p": p}, {"p": np.ones(4, dtype=np.float32)}, AdamState(), lr=0.01)
    # bias-corrected first step: delta = lr * 1 / (1 + eps)
    np.testing.assert_allclose(p.data, -0.01, rtol=1e-5)


def test_adam_is_deterministic():
    def run():
        p = Tensor(np.arange(3, dtype=np.float32), requires_grad=True)
        st = AdamState()
        for k in range(5):
            g = np.full(3, 0.5 + k, dtype=np.float32)
            adam_step({"p": p}, {"p": g}, st, lr=0.05)
        return p.data.copy()

    np.testing.assert_array_equal(run(), run())


def test_adam_nan_gradient_names_parameter():
    p = Tensor(np.zeros(2, dtype=np.float32), requires_grad=True)
    bad = np.array([np.nan, 0.0], dtype=np.float32)
    with pytest.raises(NanGradient, match="w_hidden"):
        adam_step({"w_hidden": p}, {"w_hidden": bad}, AdamState(), lr=0.1)


# ---------------------------------------------------------------------------
# one-cycle schedule
# ---------------------------------------------------------------------------

def test_onecycle_boundary_values():
    sched = OneCycleSchedule(max_lr=0.03, total_steps=5000)
    assert onecycle_lr(0, sched) == pytest.approx(0.03 / 25)
    assert onecycle_lr(0.3 * 5000, sched) == pytest.approx(0.03)
    assert onecycle_lr(5000, sched) == pytest.approx(0.03 / 1e4)


def test_onecycle_nonnegative_and_peaks_at_max():
    sched = OneCycleSchedule(max_lr=0.03, total_steps=1000)
    lrs = [onecycle_lr(s, sched) for s in range(1001)]
    assert min(lrs) >= 0
    assert max(lrs) == pytest.approx(0.03)


def test_onecycle_rejects_out_of_range_step():
    sched = OneCycleSchedule(max_lr=0.03, total_steps=100)
    with pytest.raises(ContractViolation):
        onecycle_lr(101, sched)
    with pytest.raises(ContractViolation):
        onecycle_lr(-1, sched)


# ---------------------------------------------------------------------------
# reproducibility
# ---------------------------------------------------------------------------

def test_training_loop_is_bit_reproducible():
    def run():
        rng = np.random.default_rng(42)
        w = Tensor(rng.normal(size=(4, 3)).astype(np.float32), requires_grad=True)
        b = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
        st = AdamState()
        sched = OneCycleSchedule(max_lr=0.01, total_steps=20)
        for step in range(20):
            x = Tensor(rng.normal(size=(8, 4)).astype(np.float32))
            y = Tensor(rng.normal(size=(8, 3)).astype(np.float32))
            diff = linear(x, w, b).tanh() - y
            loss = (diff * diff).mean()
            loss.backward()
            adam_step({"w": w, "b": b}, {"w": w.grad, "b": b.grad}, st,
                      lr=onecycle_lr(step, sched))
            w.zero_grad()
            b.zero_grad()
        return w.data.tobytes(), b.data.tobytes()

    assert run() == run()
