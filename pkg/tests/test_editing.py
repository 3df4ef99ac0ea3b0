"""Editing module: perceptual distance, the edit optimizer's contracts,
inversion flags, and result serialization. Runs on a small untrained
backbone; quality claims that need a trained one live in the acceptance
suite."""

import numpy as np
import pytest
from numpy.random import default_rng

from planehead.autodiff import Tensor, no_grad
from planehead.backbone import init_decoders, init_generator, mapping, render, synthesize_triplane
from planehead.config import Config
from planehead.editing import (EditRequest, InversionResult, PerceptualExtractor,
                               derive_region, invert_latent, load_edit_result,
                               multi_view_check, optimize_edit,
                               perceptual_distance, save_edit_result)
from planehead.errors import ContractViolation, TrainingDiverged
from planehead.rays import Camera

MINI = Config(style_dim=8, plane_channels=4, plane_res=16, synth_channels=6,
              mapping_hidden=16, decoder_hidden=12, n_ray_samples=8,
              image_size=16)
CAM = Camera(width=16, height=16)


@pytest.fixture(scope="module")
def setup():
    rng = default_rng(0)
    params = init_generator(rng, MINI)
    params.update(init_decoders(rng, MINI))
    from planehead.scenes import LatentSeed
    w = mapping(params, LatentSeed.random(default_rng(5)), MINI).data
    with no_grad():
        planes = synthesize_triplane(params, Tensor(w), MINI).data
    out = render(params, planes, CAM, cfg=MINI)
    return params, w, out


def _edit_target(mask):
    """A target that provably differs: flip a 2x2 block to another class."""
    tgt = np.asarray(mask).copy()
    present = np.unique(tgt)
    new = next(c for c in range(1, 7) if c not in present[:1])
    ys, xs = np.where(tgt != new)
    y, x = ys[len(ys) // 2], xs[len(xs) // 2]
    tgt[y:y + 2, x:x + 2] = new
    assert (tgt != mask).any()
    return tgt


# ------------------------------------------------------------ perceptual

def test_perceptual_identical_images_zero():
    a = default_rng(1).random((3, 16, 16)).astype(np.float32)
    assert perceptual_distance(a, a.copy()).item() == 0.0


def test_perceptual_zero_region_zero():
    a = default_rng(1).random((3, 16, 16)).astype(np.float32)
    b = default_rng(2).random((3, 16, 16)).astype(np.float32)
    assert perceptual_distance(a, b, region=np.zeros((16, 16))).item() == 0.0
    assert perceptual_distance(a, b).item() > 0.0


def test_perceptual_symmetric():
    r = default_rng(3)
    for _ in range(5):
        a = r.random((3, 16, 16)).astype(np.float32)
        b = r.random((3, 16, 16)).astype(np.float32)
        assert perceptual_distance(a, b).item() == perceptual_distance(b, a).item()


def test_perceptual_deterministic_per_seed():
    a = default_rng(4).random((3, 16, 16)).astype(np.float32)
    b = default_rng(5).random((3, 16, 16)).astype(np.float32)
    d1 = perceptual_distance(a, b, extractor=PerceptualExtractor(seed=7)).item()
    d2 = perceptual_distance(a, b, extractor=PerceptualExtractor(seed=7)).item()
    d3 = perceptual_distance(a, b, extractor=PerceptualExtractor(seed=8)).item()
    assert d1 == d2
    assert d1 != d3


def test_perceptual_shape_checks():
    a = np.zeros((3, 16, 16), np.float32)
    with pytest.raises(ContractViolation):
        perceptual_distance(a, np.zeros((3, 8, 8), np.float32))
    with pytest.raises(ContractViolation):
        perceptual_distance(a, a, region=np.zeros((8, 8)))
    with pytest.raises(ContractViolation):
        PerceptualExtractor().features(np.zeros((16, 16), np.float32))


def test_perceptual_gradient_flows_and_descends():
    r = default_rng(6)
    a = Tensor(r.random((3, 16, 16)).astype(np.float32), requires_grad=True)
    b = r.random((3, 16, 16)).astype(np.float32)
    d = perceptual_distance(a, b)
    d.backward()
    g = a.grad
    assert g is not None and np.isfinite(g).all() and np.abs(g).max() > 0
    stepped = a.data - 0.05 * g / (np.abs(g).max() + 1e-12)
    assert perceptual_distance(stepped, b).item() < d.item()


# ------------------------------------------------------------ region helper

def test_derive_region_cross():
    a = np.zeros((11, 11), np.uint8)
    b = a.copy()
    b[5, 5] = 2
    r = derive_region(a, b, dilation=1)
    want = {(5, 5), (4, 5), (6, 5), (5, 4), (5, 6)}
    assert {tuple(p) for p in np.argwhere(r > 0)} == want


def test_derive_region_identical_masks():
    a = np.ones((9, 9), np.uint8)
    assert derive_region(a, a.copy()).sum() == 0


# ------------------------------------------------------------ request checks

def test_request_validation(setup):
    _, w, out = setup
    ok = dict(w=w, camera=CAM, target=out.mask, region=np.zeros((16, 16)))
    EditRequest(**ok)
    with pytest.raises(ContractViolation):
        EditRequest(**{**ok, "mode": "both"})
    with pytest.raises(ContractViolation):
        EditRequest(**{**ok, "budget": -1})
    with pytest.raises(ContractViolation):
        EditRequest(**{**ok, "lam_ce": -0.1})
    with pytest.raises(ContractViolation):
        EditRequest(**{**ok, "region": np.full((16, 16), 0.5)})
    with pytest.raises(ContractViolation):
        EditRequest(**{**ok, "target": out.mask[:8]})


def test_region_must_cover_mask_difference(setup):
    params, w, out = setup
    tgt = _edit_target(out.mask)
    req = EditRequest(w=w, camera=CAM, target=tgt,
                      region=np.zeros((16, 16)), budget=2)
    with pytest.raises(ContractViolation, match="region must cover"):
        optimize_edit(req, params, cfg=MINI)


# ------------------------------------------------------------ optimizer

def test_zero_budget_returns_exact_zero_offset(setup):
    params, w, out = setup
    req = EditRequest(w=w, camera=CAM, target=out.mask,
                      region=np.zeros((16, 16)), budget=0)
    res = optimize_edit(req, params, cfg=MINI)
    assert np.array_equal(res.delta_w, np.zeros_like(w))
    assert res.steps == 0 and len(res.trace) == 1 and res.best_step == 0
    # zero offset reproduces the source render bit-exactly
    assert np.array_equal(res.image, out.rgb)
    assert np.array_equal(res.mask, out.mask)


def test_empty_region_is_identity_at_any_budget(setup):
    # nothing allowed to change -> the optimizer must not move at all,
    # whatever the budget says
    params, w, out = setup
    req = EditRequest(w=w, camera=CAM, target=out.mask,
                      region=np.zeros((16, 16)), budget=50)
    res = optimize_edit(req, params, cfg=MINI)
    assert np.array_equal(res.delta_w, np.zeros_like(w))
    assert res.steps == 0 and res.best_step == 0
    assert np.array_equal(res.image, out.rgb)
    assert res.trace[0]["perceptual"] == 0.0


def test_trace_shape_and_best_iterate(setup):
    params, w, out = setup
    tgt = _edit_target(out.mask)
    req = EditRequest(w=w, camera=CAM, target=tgt,
                      region=derive_region(out.mask, tgt), budget=12)
    res = optimize_edit(req, params, cfg=MINI)
    assert len(res.trace) <= 13 and res.steps == len(res.trace) - 1
    for row in res.trace:
        assert set(row) == {"step", "total", "perceptual", "ce", "dice"}
    totals = [r["total"] for r in res.trace]
    assert res.best_step == int(np.argmin(totals))
    assert res.trace[res.best_step]["total"] == min(totals)
    assert res.duration > 0
    assert res.delta_w.shape == w.shape


def test_edit_moves_toward_target(setup):
    params, w, out = setup
    tgt = _edit_target(out.mask)
    req = EditRequest(w=w, camera=CAM, target=tgt,
                      region=derive_region(out.mask, tgt), budget=60)
    res = optimize_edit(req, params, cfg=MINI)
    dices = [r["dice"] for r in res.trace]
    assert min(dices) < dices[0]


def test_percentage_mode_matches_zero_overlap_weight(setup):
    params, w, out = setup
    tgt = _edit_target(out.mask)
    region = derive_region(out.mask, tgt)
    a = optimize_edit(EditRequest(w=w, camera=CAM, target=tgt, region=region,
                                  lam_ovlp=0.0, budget=8, mode="overlap"),
                      params, cfg=MINI)
    b = optimize_edit(EditRequest(w=w, camera=CAM, target=tgt, region=region,
                                  budget=8, mode="percentage"),
                      params, cfg=MINI)
    assert a.trace == b.trace
    assert np.array_equal(a.delta_w, b.delta_w)
    assert np.array_equal(a.image, b.image)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_trace(setup):
    params, w, out = setup
    bad = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
           for k, v in params.items()}
    bad["app.0.w"].data[:] = np.nan
    req = EditRequest(w=w, camera=CAM, target=out.mask,
                      region=np.ones((16, 16)), budget=5)
    with pytest.raises(TrainingDiverged) as e:
        optimize_edit(req, bad, cfg=MINI)
    assert len(e.value.trace) >= 1


def test_early_stop_cuts_budget(setup):
    params, w, out = setup
    req = EditRequest(w=w, camera=CAM, target=out.mask,
                      region=np.ones((16, 16)), budget=300)
    res = optimize_edit(req, params, cfg=MINI,
                        early_stop_steps=5, early_stop_tol=1e9)
    # with an impossible improvement bar the dice never "gains"; stop at 5
    assert res.steps == 5


# ------------------------------------------------------------ multi-view

def test_multi_view_report(setup):
    params, w, out = setup
    req = EditRequest(w=w, camera=CAM, target=out.mask,
                      region=np.zeros((16, 16)), budget=0)
    res = optimize_edit(req, params, cfg=MINI)
    cams = [Camera(width=16, height=16, yaw=-0.3),
            Camera(width=16, height=16, yaw=0.3),
            Camera(width=16, height=16, pitch=0.2)]
    rep = multi_view_check(res, cams, params, cfg=MINI)
    assert len(rep) == len(cams)
    # identity edit: per-view counts equal the pre-edit renders
    with no_grad():
        planes = synthesize_triplane(params, Tensor(w), MINI).data
    for cam, row in zip(cams, rep):
        ref = render(params, planes, cam, cfg=MINI)
        want = {c: int((ref.mask == c).sum()) for c in range(ref.seg.shape[0])}
        assert row["class_counts"] == want
        assert row["edited_classes"] == []
    with pytest.raises(ContractViolation):
        multi_view_check(res, cams[:1], params, cfg=MINI)


# ------------------------------------------------------------ inversion

def test_invert_at_known_code_zero_steps(setup):
    params, w, out = setup
    inv = invert_latent(out.rgb, params, CAM, cfg=MINI, init=w, budget=0)
    assert isinstance(inv, InversionResult)
    assert inv.steps == 0 and inv.converged
    assert inv.distance <= 1e-6


def test_invert_noise_flags_nonconverged(setup):
    params, _, _ = setup
    noise = default_rng(9).random((3, 16, 16)).astype(np.float32)
    inv = invert_latent(noise, params, CAM, cfg=MINI, budget=5)
    assert not inv.converged
    assert inv.distance > 0.02


def test_invert_rejects_wrong_image_shape(setup):
    params, _, _ = setup
    with pytest.raises(ContractViolation):
        invert_latent(np.zeros((3, 8, 8), np.float32), params, CAM, cfg=MINI)


# ------------------------------------------------------------ serialization

def test_edit_result_round_trip(tmp_path, setup):
    params, w, _ = setup
    cam = Camera(width=16, height=16, yaw=0.1)
    with no_grad():
        planes = synthesize_triplane(params, Tensor(w), MINI).data
    out = render(params, planes, cam, cfg=MINI)
    tgt = _edit_target(out.mask)
    req = EditRequest(w=w, camera=cam,
                      target=tgt, region=derive_region(out.mask, tgt),
                      budget=6, mode="percentage", lam_ce=0.7)
    res = optimize_edit(req, params, cfg=MINI)
    save_edit_result(tmp_path / "edit", res)
    back = load_edit_result(tmp_path / "edit")
    assert np.array_equal(back.delta_w, res.delta_w)
    assert np.allclose(back.image, res.image, atol=1e-7)
    assert np.array_equal(back.mask, res.mask)
    assert back.trace == res.trace
    assert back.request.mode == "percentage"
    assert back.request.lam_ce == 0.7
    assert back.request.camera == req.camera
    assert np.array_equal(back.request.target, tgt)
    assert (tmp_path / "edit" / "mask_edited.palette.json").exists()
    assert (tmp_path / "edit" / "trace.csv").read_text().splitlines()[0] == \
        "step,total,perceptual,ce,dice"
