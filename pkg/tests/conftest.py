"""Session fixtures: a trained backbone and a recorded edit suite.

Both are expensive to produce, so they are cached under tests/_cache and
rebuilt only when missing (or, for the edits, when the backbone they
were recorded against changes). First build takes roughly half an hour
for the backbone and a few minutes for the edits.
"""

import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from numpy.random import default_rng
from scipy import ndimage

from planehead.autodiff import Tensor, no_grad
from planehead.backbone import (init_decoders, init_generator, load_params,
                                mapping, params_checksum, render,
                                save_params, synthesize_triplane, to_tensors)
from planehead.backbone.pretrain import PretrainConfig, pretrain_stage1, pretrain_stage2
from planehead.config import DEFAULT
from planehead.editing import (EditRequest, derive_region, load_edit_result,
                               optimize_edit, save_edit_result)
from planehead.rays import Camera
from planehead.scenes import LatentSeed

CACHE = Path(__file__).parent / "_cache"

# two-phase curriculum: reconstruction-weighted warmup, then a pass with
# the density term upweighted so geometry settles into the early rows
PHASE_A = dict(stage1_steps=3500, stage2_steps=1600, sigma_weight=2.0)
PHASE_B = dict(stage1_steps=3000, stage2_steps=2400, sigma_weight=6.0)
COMMON = dict(batch_scenes=2, rays_per_scene=320, log_every=500)

EDIT_CAMERA = Camera(yaw=0.15, pitch=0.05, width=32, height=32)
EDIT_BUDGET = 100
EDIT_CLASS = 4          # the mouth: small enough that a grown patch stays
                        # within a few percent of the frame
N_EDIT_PAIRS = 5
EDIT_SUITE_TAG = "v3"   # bump to invalidate recorded edits


def _build_backbone(progress):
    rng = default_rng(0)
    params = init_generator(rng, DEFAULT)
    params.update(init_decoders(rng, DEFAULT))
    pa = PretrainConfig(**PHASE_A, **COMMON)
    progress("backbone phase A stage 1")
    params, _ = pretrain_stage1(params, pa, seed=0)
    progress("backbone phase A stage 2")
    params, _ = pretrain_stage2(params, pa, seed=1)
    pb = PretrainConfig(**PHASE_B, **COMMON)
    progress("backbone phase B stage 1")
    params, _ = pretrain_stage1(params, pb, seed=10)
    progress("backbone phase B stage 2")
    params, _ = pretrain_stage2(params, pb, seed=11)
    return params


@pytest.fixture(scope="session")
def trained_backbone():
    """Parameters of the full-size backbone, built once and cached."""
    path = CACHE / "backbone.ckpt"
    if not path.is_file():
        CACHE.mkdir(exist_ok=True)

        def progress(msg):
            print(f"[conftest] {msg}", flush=True)

        params = _build_backbone(progress)
        save_params(path, params)
    return to_tensors(load_params(path), requires_grad=False)


def latent_of(params, seed_key) -> np.ndarray:
    with no_grad():
        seed = LatentSeed.random(default_rng(seed_key))
        return mapping(params, seed).data


def planes_of(params, w) -> np.ndarray:
    with no_grad():
        return synthesize_triplane(params, Tensor(np.asarray(w, np.float32))).data


def _scripted_edit(params, idx):
    """Extend the mouth downward by a small patch; None when this face
    gives no clean case (class missing, patch clipped, or region too big)."""
    w = latent_of(params, [4100, idx])
    out = render(params, planes_of(params, w), EDIT_CAMERA)
    mask = out.mask
    part = mask == EDIT_CLASS
    if part.sum() < 8:
        return None
    lab, _ = ndimage.label(part)
    largest = int(np.argmax(np.bincount(lab.reshape(-1))[1:])) + 1
    ys, xs = np.where(lab == largest)
    ymax = ys.max()
    cx = int(round(xs[ys == ymax].mean()))
    # 2x4 patch two rows past the current boundary: big enough that the
    # budget does not saturate both modes, small enough that the dilated
    # region stays within 2% of the pixels
    if ymax + 3 > mask.shape[0] or cx - 2 < 0 or cx + 2 > mask.shape[1]:
        return None
    tgt = mask.copy()
    tgt[ymax + 1:ymax + 3, cx - 2:cx + 2] = EDIT_CLASS
    diff = int((tgt != mask).sum())
    if diff < 6:
        return None
    region = derive_region(mask, tgt, dilation=1)
    if region.sum() > 0.02 * mask.size:
        return None
    return w, tgt, region, mask


def _record_edit_suite(params, root: Path):
    digest = params_checksum(params)
    pairs = []
    idx = 0
    while len(pairs) < N_EDIT_PAIRS and idx < 60:
        case = _scripted_edit(params, idx)
        idx += 1
        if case is None:
            continue
        w, tgt, region, source_mask = case
        pair_dir = root / f"pair{len(pairs)}"
        for mode in ("overlap", "percentage"):
            req = EditRequest(w=w, camera=EDIT_CAMERA, target=tgt,
                              region=region, budget=EDIT_BUDGET, mode=mode)
            print(f"[conftest] edit pair {len(pairs)} {mode}", flush=True)
            res = optimize_edit(req, params)
            save_edit_result(pair_dir / mode, res)
        pairs.append({"dir": pair_dir.name, "latent_key": [4100, idx - 1],
                      "diff_px": int((tgt != source_mask).sum()),
                      "region_px": int(region.sum())})
    if len(pairs) < N_EDIT_PAIRS:
        raise RuntimeError("could not script enough small-region edits")
    (root / "suite.json").write_text(json.dumps(
        {"tag": EDIT_SUITE_TAG, "backbone": digest, "camera_yaw": EDIT_CAMERA.yaw,
         "budget": EDIT_BUDGET, "edit_class": EDIT_CLASS, "pairs": pairs},
        indent=2))


@pytest.fixture(scope="session")
def edit_suite(trained_backbone):
    """Five recorded small-region edits, one overlap and one percentage run
    each, keyed to the backbone they were optimized against."""
    root = CACHE / "edits"
    meta_path = root / "suite.json"
    digest = params_checksum(trained_backbone)
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        if meta.get("backbone") != digest or meta.get("tag") != EDIT_SUITE_TAG:
            shutil.rmtree(root)
    if not meta_path.is_file():
        root.mkdir(parents=True, exist_ok=True)
        try:
            _record_edit_suite(trained_backbone, root)
        except BaseException:
            shutil.rmtree(root, ignore_errors=True)
            raise
    meta = json.loads(meta_path.read_text())
    loaded = []
    for pair in meta["pairs"]:
        loaded.append({
            "overlap": load_edit_result(root / pair["dir"] / "overlap"),
            "percentage": load_edit_result(root / pair["dir"] / "percentage"),
            **pair,
        })
    return {"meta": meta, "pairs": loaded}
