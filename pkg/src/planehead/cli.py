"""Command-line entry points for every pipeline stage.

Exit codes: 0 success, 1 domain error (bad inputs, diverged training,
missing files), 2 usage error.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np
from numpy.random import default_rng

from .adapter import AdapterTrainConfig, load_fewshot, make_seg_head, train_adapter
from .autodiff import Tensor, no_grad
from .backbone.checkpoint import load_params, to_tensors
from .backbone.decoders import init_decoders
from .backbone.generator import init_generator, mapping, synthesize_triplane
from .backbone.pretrain import PretrainConfig, pretrain_stage1, pretrain_stage2
from .backbone.render import render
from .config import DEFAULT, Config
from .editing import EditRequest, derive_region, optimize_edit, save_edit_result
from .errors import ContractViolation, NanGradient, TrainingDiverged
from .experiments import (ablation_grid, default_eval_camera, layer_sweep,
                          make_fewshot, scaling_curve, sweep_svg, topn_sweep,
                          write_ablation_csv, SweepReport)
from .pngio import load_mask_png, save_mask_png, save_rgb_png
from .rays import Camera
from .runs import persist_run
from .scenes import LAYOUTS, LatentSeed
from .styletransfer import style_triplet


def _ints(text):
    return tuple(int(p) for p in text.split(",") if p)


def _load_config(args) -> Config:
    return Config.from_json(args.config) if args.config else DEFAULT


def _load_backbone(path):
    """Accept a checkpoint file or a run dir holding backbone.ckpt."""
    if os.path.isdir(path):
        path = os.path.join(path, "backbone.ckpt")
    if not os.path.isfile(path):
        raise ContractViolation(f"no backbone checkpoint at {path}")
    return to_tensors(load_params(path))


def _camera(args, cfg) -> Camera:
    size = getattr(args, "size", None) or cfg.image_size
    return Camera(yaw=args.yaw, pitch=args.pitch, width=size, height=size)


def _latent(params, seed: int, cfg):
    with no_grad():
        return mapping(params, LatentSeed.random(default_rng(seed)), cfg).data


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    pcfg = PretrainConfig(stage1_steps=args.stage1_steps,
                          stage2_steps=args.stage2_steps,
                          batch_scenes=args.batch,
                          rays_per_scene=args.rays,
                          sigma_weight=args.sigma_weight,
                          log_every=args.log_every)
    rng = default_rng(args.seed)
    params = init_generator(rng, cfg)
    params.update(init_decoders(rng, cfg))
    params, log1 = pretrain_stage1(params, pcfg, seed=args.seed, cfg=cfg)
    params, log2 = pretrain_stage2(params, pcfg, seed=args.seed + 1, cfg=cfg)
    persist_run(args.out, seed=args.seed, config=cfg,
                checkpoints={"backbone": params},
                reports={"pretrain_log.json": {"stage1": log1, "stage2": log2}})
    print(f"wrote backbone checkpoint to {args.out}")
    return 0


def cmd_train_adapter(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    if args.fewshot:
        fs = load_fewshot(args.fewshot)
    else:
        layout = LAYOUTS.get(args.layout)
        if layout is None:
            raise ContractViolation(f"unknown layout {args.layout!r}; have {sorted(LAYOUTS)}")
        fs = make_fewshot(params, layout, args.n_shots, args.seed, cfg=cfg,
                          mask_size=args.mask_size)
    tcfg = AdapterTrainConfig(total_steps=args.steps, batch=args.batch,
                              lambda_switch=args.lambda_switch,
                              no_injection=args.no_injection,
                              no_lmta=args.no_lmta, mix_all=args.mix_all,
                              rays_per_item=args.rays_per_item,
                              log_every=args.log_every)
    adapter, log = train_adapter(params, fs, tcfg, seed=args.seed, cfg=cfg)
    persist_run(args.out, seed=args.seed, config=cfg,
                checkpoints={"adapter": adapter},
                reports={"adapter_log.json": log,
                         "adapter_meta.json": {"layout": fs.layout.name,
                                               "n_shots": len(fs.items)}})
    print(f"wrote adapter checkpoint to {args.out}")
    return 0


def cmd_layer_sweep(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    cam = _camera(args, cfg) if args.size else default_eval_camera()
    report = layer_sweep(params, n_pairs=args.pairs, seed=args.seed,
                         camera=cam, cfg=cfg)
    os.makedirs(args.out, exist_ok=True)
    report.to_json(os.path.join(args.out, "layer_sweep.json"))
    report.to_csv(os.path.join(args.out, "layer_sweep.csv"))
    sweep_svg(report, os.path.join(args.out, "layer_sweep.svg"))
    persist_run(args.out, seed=args.seed, config=cfg)
    top = report.top(5, "by_miou")
    print(f"top-5 layers by mask agreement: {top}")
    return 0


def cmd_topn_sweep(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    rankings = SweepReport.from_json(args.ranking)
    cam = _camera(args, cfg) if args.size else default_eval_camera()
    report = topn_sweep(params, rankings, n_values=_ints(args.n_values),
                        order=args.order, n_pairs=args.pairs,
                        seed=args.seed, camera=cam, cfg=cfg)
    os.makedirs(args.out, exist_ok=True)
    report.to_json(os.path.join(args.out, f"topn_{args.order}.json"))
    report.to_csv(os.path.join(args.out, f"topn_{args.order}.csv"))
    persist_run(args.out, seed=args.seed, config=cfg)
    print(f"wrote top-n sweep ({args.order}) to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    layout = LAYOUTS[args.layout]
    tcfg = AdapterTrainConfig(total_steps=args.steps, batch=args.batch,
                              lambda_switch=args.lambda_switch,
                              rays_per_item=args.rays_per_item,
                              log_every=max(args.steps, 1))
    os.makedirs(args.out, exist_ok=True)
    rows = ablation_grid(params, sizes=_ints(args.sizes), seeds=_ints(args.seeds),
                         layout=layout, tcfg=tcfg, n_eval=args.n_eval, cfg=cfg,
                         csv_path=os.path.join(args.out, "ablation.csv"),
                         log=print, fs_mask_size=args.mask_size)
    with open(os.path.join(args.out, "ablation.json"), "w") as f:
        json.dump(rows, f, indent=2)
    persist_run(args.out, seed=args.seed, config=cfg)
    print(f"wrote ablation grid ({len(rows)} cells) to {args.out}")
    return 0


def cmd_scaling(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    layout = LAYOUTS[args.layout]
    tcfg = AdapterTrainConfig(total_steps=args.steps, batch=args.batch,
                              lambda_switch=args.lambda_switch,
                              rays_per_item=args.rays_per_item,
                              log_every=max(args.steps, 1))
    os.makedirs(args.out, exist_ok=True)
    out = scaling_curve(params, sizes=_ints(args.sizes), seed=args.seed,
                        layout=layout, tcfg=tcfg, n_eval=args.n_eval, cfg=cfg,
                        csv_path=os.path.join(args.out, "scaling.csv"),
                        log=print, fs_mask_size=args.mask_size)
    with open(os.path.join(args.out, "scaling.json"), "w") as f:
        json.dump(out, f, indent=2)
    persist_run(args.out, seed=args.seed, config=cfg)
    print(f"spearman rho over sizes: {out['spearman_rho']:.3f}")
    return 0


def cmd_edit(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    seg_head = None
    if args.adapter:
        apath = args.adapter
        if os.path.isdir(apath):
            apath = os.path.join(apath, "adapter.ckpt")
        seg_head = make_seg_head(to_tensors(load_params(apath), requires_grad=False))
    cam = _camera(args, cfg)
    target = load_mask_png(args.target)
    w = _latent(params, args.seed, cfg)
    if args.region:
        region = load_mask_png(args.region)
    else:
        with no_grad():
            planes = synthesize_triplane(params, Tensor(w), cfg).data
        current = render(params, planes, cam, seg_head=seg_head, cfg=cfg).mask
        region = derive_region(current, target)
    req = EditRequest(w=w, camera=cam, target=target, region=region,
                      lam_ce=args.lam_ce, lam_ovlp=args.lam_ovlp,
                      budget=args.budget, mode=args.mode)
    res = optimize_edit(req, params, seg_head=seg_head, cfg=cfg)
    os.makedirs(args.out, exist_ok=True)
    save_edit_result(args.out, res)
    delta = res.delta_w
    persist_run(args.out, seed=args.seed, config=cfg,
                reports={"edit_summary.json": {
                    "delta_norm": float(np.linalg.norm(delta)),
                    "delta_sha256": hashlib.sha256(
                        np.ascontiguousarray(delta, dtype="<f4").tobytes()).hexdigest(),
                    "best_step": res.best_step, "steps": res.steps,
                    "duration": res.duration}})
    print(f"edit done: best step {res.best_step}, "
          f"|delta| = {float(np.linalg.norm(delta)):.6f}, wrote {args.out}")
    return 0


def cmd_style_transfer(args) -> int:
    cfg = _load_config(args)
    params = _load_backbone(args.backbone)
    w_src = _latent(params, args.seed, cfg)
    w_sty = _latent(params, args.style_seed, cfg)
    cam = _camera(args, cfg)
    labels = _ints(args.labels) if args.labels else ()
    out = style_triplet(params, w_src, w_sty, cam, labels,
                        width=args.blend_width, cfg=cfg)
    os.makedirs(args.out, exist_ok=True)
    save_rgb_png(out["source"].rgb, os.path.join(args.out, "source.png"))
    save_rgb_png(out["full"].rgb, os.path.join(args.out, "full.png"))
    save_rgb_png(out["partial"], os.path.join(args.out, "partial.png"))
    save_mask_png(out["source"].mask, os.path.join(args.out, "source_mask.png"))
    persist_run(args.out, seed=args.seed, config=cfg)
    print(f"wrote style transfer triplet to {args.out}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve
    cfg = _load_config(args)
    data_dir = args.data_dir or os.environ.get("FFN_DATA_DIR")
    if not data_dir:
        raise ContractViolation("pass --data-dir or set FFN_DATA_DIR")
    serve(data_dir, port=args.port, host=args.host, cfg=cfg, log=print)
    return 0


def _common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--config", default=None, help="config JSON path")
    sub.add_argument("--out", default="run", help="output directory")


def _camera_opts(sub, size_default=None):
    sub.add_argument("--yaw", type=float, default=0.15)
    sub.add_argument("--pitch", type=float, default=0.05)
    sub.add_argument("--size", type=int, default=size_default)


def _adapter_train_opts(sub, steps):
    sub.add_argument("--steps", type=int, default=steps)
    sub.add_argument("--batch", type=int, default=4)
    sub.add_argument("--lambda-switch", type=int, default=None)
    sub.add_argument("--rays-per-item", type=int, default=0)
    sub.add_argument("--mask-size", type=int, default=40)
    sub.add_argument("--layout", default="eyes", choices=sorted(LAYOUTS))


def build_parser():
    p = argparse.ArgumentParser(prog="planehead",
                                description="tri-plane few-shot segmentation and editing")
    subs = p.add_subparsers(dest="command", required=True)

    s = subs.add_parser("pretrain", help="train the generative backbone")
    _common(s)
    s.add_argument("--stage1-steps", type=int, default=20000)
    s.add_argument("--stage2-steps", type=int, default=10000)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--rays", type=int, default=1024)
    s.add_argument("--sigma-weight", type=float, default=1.0)
    s.add_argument("--log-every", type=int, default=200)
    s.set_defaults(func=cmd_pretrain)

    s = subs.add_parser("train-adapter", help="fit the few-shot mask adapter")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--fewshot", default=None, help="few-shot set dir; omit to synthesize")
    s.add_argument("--n-shots", type=int, default=10)
    _adapter_train_opts(s, steps=5000)
    s.add_argument("--no-injection", action="store_true")
    s.add_argument("--no-lmta", action="store_true")
    s.add_argument("--mix-all", action="store_true")
    s.add_argument("--log-every", type=int, default=200)
    s.set_defaults(func=cmd_train_adapter)

    s = subs.add_parser("layer-sweep", help="single-row substitution sweep")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--pairs", type=int, default=1000)
    _camera_opts(s)
    s.set_defaults(func=cmd_layer_sweep)

    s = subs.add_parser("topn-sweep", help="alpha=0.5 mixing over a ranking prefix")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--ranking", required=True, help="layer-sweep report JSON")
    s.add_argument("--order", default="by_miou", choices=["by_miou", "by_l1"])
    s.add_argument("--n-values", default="2,3,4,5,6")
    s.add_argument("--pairs", type=int, default=1000)
    _camera_opts(s)
    s.set_defaults(func=cmd_topn_sweep)

    s = subs.add_parser("ablate", help="variant grid over few-shot sizes")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--sizes", default="1,5,10,20,30")
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--n-eval", type=int, default=22)
    _adapter_train_opts(s, steps=5000)
    s.set_defaults(func=cmd_ablate)

    s = subs.add_parser("scaling", help="mask count scaling curve")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--sizes", default="1,2,5,10,20,30,40")
    s.add_argument("--n-eval", type=int, default=22)
    _adapter_train_opts(s, steps=5000)
    s.set_defaults(func=cmd_scaling)

    s = subs.add_parser("edit", help="optimize a latent offset toward a target mask")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--adapter", default=None)
    s.add_argument("--target", required=True, help="target mask PNG")
    s.add_argument("--region", default=None, help="region mask PNG; omit to derive")
    s.add_argument("--mode", default="overlap", choices=["overlap", "percentage"])
    s.add_argument("--budget", type=int, default=300)
    s.add_argument("--lam-ce", type=float, default=0.5)
    s.add_argument("--lam-ovlp", type=float, default=1.0)
    _camera_opts(s)
    s.set_defaults(func=cmd_edit)

    s = subs.add_parser("style-transfer", help="appearance swap, full and per-part")
    _common(s)
    s.add_argument("--backbone", required=True)
    s.add_argument("--style-seed", type=int, default=1)
    s.add_argument("--labels", default="", help="comma class indices for partial blend")
    s.add_argument("--blend-width", type=int, default=11)
    _camera_opts(s)
    s.set_defaults(func=cmd_style_transfer)

    s = subs.add_parser("serve", help="local HTTP service for the mask editor")
    _common(s)
    s.add_argument("--port", type=int, default=8087)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--data-dir", default=None, help="checkpoint root (or FFN_DATA_DIR)")
    s.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "lambda_switch", None) is None and hasattr(args, "lambda_switch"):
        args.lambda_switch = max(1, int(args.steps * 0.8))
    try:
        return args.func(args)
    except (ContractViolation, TrainingDiverged, NanGradient, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
