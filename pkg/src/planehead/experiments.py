"""Experiment harnesses over the backbone and adapter.

Four studies: a single-layer substitution sweep that ranks style rows by how
much mixing them disturbs masks versus plane content, a top-N mixing sweep
that compares those rankings as augmentation-selection criteria, a few-shot
ablation grid over dataset sizes and method variants, and a dataset-size
scaling curve. Reports serialize to CSV/JSON with a schema version line and
an optional SVG plot.
"""

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.random import default_rng
from scipy.stats import spearmanr

from .adapter import (AdapterTrainConfig, FewShotItem, FewShotSet, MixSpec,
                      lmta_mix, make_seg_head, train_adapter)
from .autodiff import Tensor, no_grad
from .backbone import mapping, render, synthesize_triplane
from .config import DEFAULT, Config
from .errors import ContractViolation
from .metrics import l1_triplane, miou
from .rays import Camera
from .scenes import LAYOUTS, LatentSeed, LayoutSpec, ground_truth_render, scene_from_latent

SCHEMA_VERSION = 1
N_EVAL_SEEDS = 22
EVAL_SEED_BASE = 9000
ABLATION_SIZES = (1, 5, 10, 20, 30)
ABLATION_VARIANTS = ("full", "no_injection", "no_lmta", "mix_all")
SCALING_SIZES = (1, 2, 5, 10, 20, 30, 40)


def default_eval_camera(size: int = 40) -> Camera:
    return Camera(yaw=0.15, pitch=0.05, width=size, height=size)


# ------------------------------------------------------------ report type

@dataclass
class SweepReport:
    """Per-key means from a mixing sweep plus rankings derived from them."""
    kind: str                 # "layer" or "topn"
    entries: list             # dicts: key, miou, l1, count
    rankings: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        for e in self.entries:
            if e["count"] <= 0:
                raise ContractViolation(f"empty sweep cell for key {e['key']}")
        for name, order in self.rankings.items():
            if list(order) != self._rank(name):
                raise ContractViolation(f"ranking '{name}' does not match the means")

    def _rank(self, name):
        value = {"by_miou": "miou", "by_l1": "l1"}[name]
        return [e["key"] for e in
                sorted(self.entries, key=lambda e: (-e[value], e["key"]))]

    def top(self, n: int, order: str = "by_miou") -> list:
        return list(self.rankings[order][:n])

    def to_json(self, path):
        Path(path).write_text(json.dumps({
            "schema_version": SCHEMA_VERSION, "kind": self.kind,
            "seed": self.seed, "entries": self.entries,
            "rankings": self.rankings}, indent=2))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(f"# planehead-report v{SCHEMA_VERSION}\n")
            wr = csv.writer(f)
            wr.writerow(["key", "miou", "l1", "count"])
            for e in self.entries:
                wr.writerow([e["key"], e["miou"], e["l1"], e["count"]])

    @classmethod
    def from_json(cls, path):
        raw = json.loads(Path(path).read_text())
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ContractViolation("unknown report schema version")
        return cls(kind=raw["kind"], entries=raw["entries"],
                   rankings=raw["rankings"], seed=raw["seed"])


def sweep_svg(report: SweepReport, path, width: int = 480, height: int = 240):
    """Tiny self-contained line plot: mIoU and L1 series over the sweep key."""
    keys = [e["key"] for e in report.entries]
    pad = 30
    spans = []
    for name in ("miou", "l1"):
        vals = [e[name] for e in report.entries]
        lo, hi = min(vals), max(vals)
        rng = (hi - lo) or 1.0
        pts = " ".join(
            f"{pad + (width - 2 * pad) * i / max(len(keys) - 1, 1):.1f},"
            f"{height - pad - (height - 2 * pad) * (v - lo) / rng:.1f}"
            for i, v in enumerate(vals))
        spans.append(pts)
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
           f'height="{height}"><rect width="100%" height="100%" fill="white"/>'
           f'<polyline points="{spans[0]}" fill="none" stroke="#1f77b4"/>'
           f'<polyline points="{spans[1]}" fill="none" stroke="#d62728"/>'
           f'<text x="{pad}" y="15" font-size="11">{report.kind} sweep: '
           f'mIoU (blue), L1 (red)</text></svg>')
    Path(path).write_text(svg)


# ------------------------------------------------------------ mixing sweeps

def _pair_codes(params, seed, i, cfg):
    r = default_rng([seed, i])
    w1 = mapping(params, LatentSeed.random(r), cfg).data
    w2 = mapping(params, LatentSeed.random(r), cfg).data
    return w1, w2


def _base_mask(params, w, camera, cfg):
    with no_grad():
        planes = synthesize_triplane(params, Tensor(w), cfg).data
    return planes, render(params, planes, camera, cfg=cfg).mask


def layer_sweep(params, n_pairs: int = 12, layers=None, seed: int = 0,
                camera: Camera = None, cfg: Config = DEFAULT) -> SweepReport:
    """Substitute one style row at a time (alpha = 1) and measure the damage.

    For each sampled code pair and each layer, swaps only that row and
    records mask mIoU against the unmixed render and L1 between the planes.
    """
    camera = camera or default_eval_camera()
    layers = list(layers) if layers is not None else list(range(1, cfg.style_layers + 1))
    sums = {i: [0.0, 0.0, 0] for i in layers}
    for p in range(n_pairs):
        w1, w2 = _pair_codes(params, seed, p, cfg)
        planes1, mask1 = _base_mask(params, w1, camera, cfg)
        for i in layers:
            wm = w1.copy()
            wm[i - 1] = w2[i - 1]
            planes_m, mask_m = _base_mask(params, wm, camera, cfg)
            sums[i][0] += miou(mask1, mask_m)
            sums[i][1] += l1_triplane(planes1, planes_m)
            sums[i][2] += 1
    entries = [{"key": i, "miou": sums[i][0] / sums[i][2],
                "l1": sums[i][1] / sums[i][2], "count": sums[i][2]}
               for i in layers]
    report = SweepReport(kind="layer", entries=entries, seed=seed)
    report.rankings = {"by_miou": report._rank("by_miou"),
                       "by_l1": report._rank("by_l1")}
    return report


def topn_sweep(params, rankings, n_values=(2, 3, 4, 5, 6), order: str = "by_miou",
               n_pairs: int = 12, seed: int = 0, camera: Camera = None,
               cfg: Config = DEFAULT) -> SweepReport:
    """Mix the top-N layers of a ranking at alpha = 0.5 and measure means.

    rankings: a SweepReport from layer_sweep or its rankings dict.
    """
    if isinstance(rankings, SweepReport):
        rankings = rankings.rankings
    if order not in rankings:
        raise ContractViolation(f"no '{order}' ranking available")
    camera = camera or default_eval_camera()
    entries = []
    for n in n_values:
        chosen = rankings[order][:n]
        sel = np.zeros(cfg.style_layers, np.int64)
        sel[[i - 1 for i in chosen]] = 1
        spec = MixSpec(sel=sel, alpha=0.5)
        tot_m = tot_l = 0.0
        for p in range(n_pairs):
            w1, w2 = _pair_codes(params, seed, p, cfg)
            planes1, mask1 = _base_mask(params, w1, camera, cfg)
            wm = lmta_mix(w1, w2, spec)
            planes_m, mask_m = _base_mask(params, wm, camera, cfg)
            tot_m += miou(mask1, mask_m)
            tot_l += l1_triplane(planes1, planes_m)
        entries.append({"key": n, "miou": tot_m / n_pairs,
                        "l1": tot_l / n_pairs, "count": n_pairs,
                        "layers": [int(i) for i in chosen]})
    return SweepReport(kind="topn", entries=entries, seed=seed)


# ------------------------------------------------------------ few-shot data

def make_fewshot(params, layout: LayoutSpec, n: int, seed: int,
                 cfg: Config = DEFAULT, mask_size: int = 40) -> FewShotSet:
    """Synthesize n annotated samples: latent, a varied camera, and the
    ground-truth mask of the latent's scene under the given layout."""
    items = []
    for i in range(n):
        r = default_rng([seed, 77, i])
        z = LatentSeed.random(r)
        cam = Camera(yaw=float(r.uniform(-0.45, 0.45)),
                     pitch=float(r.uniform(-0.25, 0.25)),
                     width=mask_size, height=mask_size)
        gt = ground_truth_render(scene_from_latent(z), cam, layout,
                                 n_samples=cfg.n_ray_samples)
        w = mapping(params, z, cfg).data
        items.append(FewShotItem(w_plus=w, camera=cam, mask=gt.mask))
    return FewShotSet(items=items, layout=layout)


def eval_refined(params, seg_head, layout: LayoutSpec, n_eval: int = N_EVAL_SEEDS,
                 seed_base: int = EVAL_SEED_BASE, camera: Camera = None,
                 cfg: Config = DEFAULT) -> dict:
    """Held-out refined-layout quality: mean mIoU over fresh scene seeds."""
    camera = camera or default_eval_camera()
    vals = []
    for i in range(n_eval):
        z = LatentSeed.random(default_rng([seed_base, i]))
        gt = ground_truth_render(scene_from_latent(z), camera, layout,
                                 n_samples=cfg.n_ray_samples)
        w = mapping(params, z, cfg).data
        with no_grad():
            planes = synthesize_triplane(params, Tensor(w), cfg).data
        out = render(params, planes, camera, seg_head=seg_head, cfg=cfg)
        vals.append(miou(out.mask, gt.mask))
    return {"miou": float(np.mean(vals)), "per_seed": [float(v) for v in vals]}


# ------------------------------------------------------------ ablation grid

def _variant_config(variant: str, base: AdapterTrainConfig) -> AdapterTrainConfig:
    flags = {"full": {}, "no_injection": {"no_injection": True},
             "no_lmta": {"no_lmta": True}, "mix_all": {"mix_all": True}}
    if variant not in flags:
        raise ContractViolation(f"unknown variant '{variant}'")
    return replace(base, **flags[variant])


def ablation_grid(params, sizes=ABLATION_SIZES, variants=ABLATION_VARIANTS,
                  seeds=(0, 1, 2), layout: LayoutSpec = None,
                  tcfg: AdapterTrainConfig = None, n_eval: int = N_EVAL_SEEDS,
                  cfg: Config = DEFAULT, csv_path=None, log=None,
                  eval_camera: Camera = None, fs_mask_size: int = 40) -> list:
    """Train every (size, variant, seed) cell and evaluate held-out mIoU.

    A failing cell is recorded with its error and the grid keeps going.
    Returns long-form rows; csv_path additionally writes a wide table with
    one row per size and per-variant means over seeds.
    """
    layout = layout or LAYOUTS["eyes"]
    tcfg = tcfg or AdapterTrainConfig()
    rows = []
    for size in sizes:
        for variant in variants:
            vcfg = _variant_config(variant, tcfg)
            for seed in seeds:
                row = {"size": size, "variant": variant, "seed": seed,
                       "miou": float("nan"), "status": "ok"}
                try:
                    fs = make_fewshot(params, layout, size, seed=1000 * size + seed,
                                      cfg=cfg, mask_size=fs_mask_size)
                    ad, _ = train_adapter(params, fs, vcfg, seed=seed, cfg=cfg)
                    head = make_seg_head(ad, no_injection=vcfg.no_injection)
                    row["miou"] = eval_refined(params, head, layout, n_eval=n_eval,
                                               camera=eval_camera, cfg=cfg)["miou"]
                except Exception as e:  # cell isolation is the contract
                    row["status"] = f"error: {type(e).__name__}: {e}"
                rows.append(row)
                if log:
                    log(row)
    if csv_path:
        write_ablation_csv(rows, csv_path, variants=variants)
    return rows


def write_ablation_csv(rows, path, variants=ABLATION_VARIANTS):
    """Wide layout: one row per dataset size, one column per variant mean."""
    sizes = sorted({r["size"] for r in rows})
    with open(path, "w", newline="") as f:
        f.write(f"# planehead-report v{SCHEMA_VERSION}\n")
        wr = csv.writer(f)
        wr.writerow(["size"] + list(variants))
        for size in sizes:
            out = [size]
            for v in variants:
                cell = [r["miou"] for r in rows
                        if r["size"] == size and r["variant"] == v
                        and r["status"] == "ok"]
                out.append(float(np.mean(cell)) if cell else "")
            wr.writerow(out)


# ------------------------------------------------------------ scaling curve

def scaling_curve(params, sizes=SCALING_SIZES, seed: int = 0,
                  layout: LayoutSpec = None, tcfg: AdapterTrainConfig = None,
                  n_eval: int = N_EVAL_SEEDS, cfg: Config = DEFAULT,
                  csv_path=None, log=None, eval_camera: Camera = None,
                  fs_mask_size: int = 40) -> dict:
    """Held-out mIoU as the few-shot set grows, with a rank-trend statistic."""
    layout = layout or LAYOUTS["eyes"]
    tcfg = tcfg or AdapterTrainConfig()
    rows = []
    for size in sizes:
        row = {"size": size, "miou": float("nan"), "status": "ok"}
        try:
            fs = make_fewshot(params, layout, size, seed=5000 + size, cfg=cfg,
                              mask_size=fs_mask_size)
            ad, _ = train_adapter(params, fs, tcfg, seed=seed, cfg=cfg)
            head = make_seg_head(ad, no_injection=tcfg.no_injection)
            row["miou"] = eval_refined(params, head, layout, n_eval=n_eval,
                                       camera=eval_camera, cfg=cfg)["miou"]
        except Exception as e:
            row["status"] = f"error: {type(e).__name__}: {e}"
        rows.append(row)
        if log:
            log(row)
    ok = [r for r in rows if r["status"] == "ok"]
    vals = [r["miou"] for r in ok]
    if len(ok) > 1 and len(set(vals)) > 1:
        rho = float(spearmanr([r["size"] for r in ok], vals).statistic)
    else:
        rho = float("nan")  # undefined on constant or single-point input
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            f.write(f"# planehead-report v{SCHEMA_VERSION}\n")
            wr = csv.writer(f)
            wr.writerow(["size", "miou", "status"])
            for r in rows:
                wr.writerow([r["size"], r["miou"], r["status"]])
    return {"rows": rows, "spearman_rho": rho}
