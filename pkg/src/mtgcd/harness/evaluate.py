"""Evaluation reports, prediction export and ablation grids."""
import csv
import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ..errors import ConfigError
from ..metrics import summarize
from ..scenegen import load_pair
from ..vecfield import decode_values
from .checkpoint import load_checkpoint
from .config import SPLITS, apply_seed_env, load_config, with_overrides
from .data import load_split, to_example, collate
from .train import score, train

REPORT_COLUMNS = ("split", "iou", "f1", "recall", "precision", "tp", "fp", "fn", "tn", "degenerate")


def _splits(split):
    if split == "all":
        return ["test_in", "test_out"]
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected 'all' or one of {SPLITS}")
    return [split]


def evaluate_model(model, cfg, split, pairs=None):
    pairs = pairs if pairs is not None else load_split(cfg.data, split)
    counts = score(model, pairs, cfg)
    row = {"split": split, **summarize(counts), "tp": counts.tp, "fp": counts.fp, "fn": counts.fn, "tn": counts.tn}
    return row


def write_report(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def format_report(rows):
    lines = [f"{'split':<10} {'IoU':>7} {'F1':>7} {'Recall':>7} {'Prec.':>7}"]
    for r in rows:
        flag = "  (degenerate)" if r["degenerate"] else ""
        lines.append(f"{r['split']:<10} {100 * r['iou']:7.2f} {100 * r['f1']:7.2f} "
                     f"{100 * r['recall']:7.2f} {100 * r['precision']:7.2f}{flag}")
    return "\n".join(lines)


def evaluate(checkpoint, split="all", out=None, data_root=None):
    """Score a checkpoint on one split (or both test splits) and write the CSV report."""
    model, cfg, _ = load_checkpoint(checkpoint)
    if data_root is not None:
        cfg = with_overrides(cfg, {"data.root": str(data_root)})
    rows = [evaluate_model(model, cfg, s) for s in _splits(split)]
    out = Path(out) if out else Path(checkpoint) / f"eval_{split}.csv"
    write_report(rows, out)
    return rows, out


@torch.no_grad()
def predict(checkpoint, pair_dir, out=None, aux=True):
    """Write the predicted change mask (and decoded auxiliary maps) for one stored pair."""
    model, cfg, _ = load_checkpoint(checkpoint)
    pair = load_pair(pair_dir)
    out = Path(out) if out else Path(pair_dir) / "pred"
    out.mkdir(parents=True, exist_ok=True)
    batch = collate([to_example(pair, cfg.bins, cfg.data.facade_mode)])
    model.eval()
    o = model(batch["image_t1"], batch["image_t2"])
    written = []
    change = o.change.argmax(1)[0].numpy().astype(np.uint8)
    Image.fromarray(change).save(out / "pred_change.png")
    written.append(out / "pred_change.png")
    if aux and o.seg_t1 is not None:
        for t in ("t1", "t2"):
            seg = getattr(o, f"seg_{t}").argmax(1)[0].numpy().astype(np.uint8)
            Image.fromarray(seg).save(out / f"pred_seg_{t}.png")
            written.append(out / f"pred_seg_{t}.png")
        for name, (ox, oy) in {"st_t1": (o.st_t1_x, o.st_t1_y), "st_t2": (o.st_t2_x, o.st_t2_y),
                               "bt": (o.bt_x, o.bt_y)}.items():
            if cfg.loss.field_mode == "classification":
                vx = decode_values(ox.argmax(1)[0].numpy(), cfg.bins)
                vy = decode_values(oy.argmax(1)[0].numpy(), cfg.bins)
            else:
                vx, vy = ox[0, 0].numpy(), oy[0, 0].numpy()
            path = out / f"pred_{name}.f32"
            np.ascontiguousarray(np.stack([vx, vy], -1), dtype="<f4").tofile(path)
            written.append(path)
    h, w = change.shape
    (out / "meta.json").write_text(json.dumps({"height": h, "width": w, "channels": 2, "checkpoint": str(checkpoint)}))
    return written


AUX_GRID = {
    "seeds": [0, 1, 2],
    "splits": ["test_in", "test_out"],
    "variants": [
        {"name": "baseline_bn", "aux": "", "overrides": {
            "model.norm_first_layer": "batch", "model.aux_heads": False, "model.use_mtfgm": False,
            "loss.lambda1": 0.0, "loss.lambda2": 0.0, "loss.lambda3": 0.0}},
        {"name": "baseline", "aux": "", "overrides": {
            "model.aux_heads": False, "model.use_mtfgm": False,
            "loss.lambda1": 0.0, "loss.lambda2": 0.0, "loss.lambda3": 0.0}},
        {"name": "baseline+seg", "aux": "a", "overrides": {
            "model.use_mtfgm": False, "loss.lambda1": 1.0, "loss.lambda2": 0.0, "loss.lambda3": 0.0}},
        {"name": "baseline+st", "aux": "b", "overrides": {
            "model.use_mtfgm": False, "loss.lambda1": 0.0, "loss.lambda2": 1.0, "loss.lambda3": 0.0}},
        {"name": "baseline+bt", "aux": "c", "overrides": {
            "model.use_mtfgm": False, "loss.lambda1": 0.0, "loss.lambda2": 0.0, "loss.lambda3": 1.0}},
        {"name": "baseline+all", "aux": "abc", "overrides": {
            "model.use_mtfgm": False, "loss.lambda1": 1.0, "loss.lambda2": 1.0, "loss.lambda3": 1.0}},
        {"name": "mtgcd", "aux": "abc", "overrides": {
            "model.use_mtfgm": True, "loss.lambda1": 1.0, "loss.lambda2": 1.0, "loss.lambda3": 1.0}},
    ],
}

ABLATION_COLUMNS = ("variant", "aux", "seed", "split", "iou", "f1", "recall", "precision", "best_iteration")


def load_grid(grid):
    if isinstance(grid, dict):
        return grid
    if str(grid) == "aux":
        return AUX_GRID
    try:
        return json.loads(Path(grid).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read ablation grid {grid}: {e}") from e


def ablate(cfg, grid, out=None, progress=None):
    """Train and score every (variant, seed) cell of a grid.

    Writes one CSV row per cell and split, then one mean row per variant and
    split (seed column ``mean``). Returns the mean rows keyed by (variant, split).
    """
    grid = load_grid(grid)
    seeds = grid.get("seeds", [cfg.seed])
    splits = grid.get("splits", ["test_in", "test_out"])
    root = Path(out or cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    shared = {"train": load_split(cfg.data, "train"), "val": load_split(cfg.data, "val")}
    shared.update({s: load_split(cfg.data, s) for s in splits})
    rows, means = [], {}
    for variant in grid["variants"]:
        per_split = {s: [] for s in splits}
        for seed in seeds:
            run_dir = root / variant["name"] / f"seed{seed}"
            vcfg = with_overrides(cfg, {**variant.get("overrides", {}), "seed": seed, "output_dir": str(run_dir)})
            result = train(vcfg, shared["train"], shared["val"])
            model, _, _ = load_checkpoint(result.best_checkpoint)
            for s in splits:
                r = evaluate_model(model, vcfg, s, shared[s])
                per_split[s].append(r)
                rows.append({"variant": variant["name"], "aux": variant.get("aux", ""), "seed": seed, "split": s,
                             "iou": r["iou"], "f1": r["f1"], "recall": r["recall"], "precision": r["precision"],
                             "best_iteration": result.best_iteration})
                if progress:
                    progress(rows[-1])
        for s in splits:
            m = {k: float(np.mean([r[k] for r in per_split[s]])) for k in ("iou", "f1", "recall", "precision")}
            means[(variant["name"], s)] = m
            rows.append({"variant": variant["name"], "aux": variant.get("aux", ""), "seed": "mean", "split": s,
                         **m, "best_iteration": ""})
    with open(root / "ablation.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return means


def ablate_from_files(config_path, grid, out=None):
    return ablate(apply_seed_env(load_config(config_path)), grid, out)
