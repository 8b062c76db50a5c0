"""Dataset assembly: pairs from disk or from seeds, and tensor batches for training."""
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from ..labelgen import FACADE, ROOF
from ..scenegen import load_pair, make_pair, random_scene, save_pair
from ..vecfield import encode_values

IMAGE_MEAN, IMAGE_SCALE = 127.5, 64.0


def generate_pair(seed, index, params):
    return make_pair(random_scene(np.random.default_rng([seed, index]), params))


def _generate(args):
    return generate_pair(*args)


def generate_split(split_cfg, workers=1):
    jobs = [(split_cfg.seed, i, split_cfg.scene) for i in range(split_cfg.count)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_generate, jobs, chunksize=8))
    return [_generate(j) for j in jobs]


def write_dataset(data_cfg, out, workers=None):
    """Generate every split and write it under ``out/<split>/<index>``."""
    from .config import SPLITS

    out = Path(out)
    counts = {}
    for name in SPLITS:
        pairs = generate_split(data_cfg.split(name), workers or data_cfg.workers)
        for i, pair in enumerate(pairs):
            save_pair(pair, out / name / f"{i:05d}")
        counts[name] = len(pairs)
    return counts


def load_split(data_cfg, name):
    split = data_cfg.split(name)
    if data_cfg.root:
        d = Path(data_cfg.root) / name
        if d.is_dir():
            dirs = sorted(p for p in d.iterdir() if (p / "meta.json").exists())
            return [load_pair(p) for p in dirs[: split.count]]
    return generate_split(split, data_cfg.workers)


def map_facades(seg, mode):
    seg = seg.astype(np.int64)
    if mode == "background":
        return np.where(seg == FACADE, 0, seg)
    if mode == "roof":
        return np.where(seg == FACADE, ROOF, seg)
    return seg


def normalize_image(img):
    return torch.from_numpy((img.astype(np.float32) - IMAGE_MEAN) / IMAGE_SCALE).permute(2, 0, 1).contiguous()


def _field(vf):
    return torch.from_numpy(np.stack([vf.vx, vf.vy]).astype(np.float32))


def _classes(vf, table):
    return torch.from_numpy(np.stack([encode_values(vf.vx, table), encode_values(vf.vy, table)]))


def to_example(pair, table, facade_mode="separate"):
    """Unbatched tensors for one pair: images plus every label and supervision mask."""
    ignore = torch.from_numpy(pair.ignore_mask.astype(bool))
    return {
        "image_t1": normalize_image(pair.image_t1),
        "image_t2": normalize_image(pair.image_t2),
        "change": torch.from_numpy(pair.change_mask.astype(np.int64)),
        "change_ignore": torch.zeros(pair.shape, dtype=torch.bool),
        "seg_t1": torch.from_numpy(map_facades(pair.seg_t1, facade_mode)),
        "seg_t2": torch.from_numpy(map_facades(pair.seg_t2, facade_mode)),
        "seg_ignore_t1": torch.zeros(pair.shape, dtype=torch.bool),
        "seg_ignore_t2": ignore,
        "st_t1": _field(pair.st_t1),
        "st_t2": _field(pair.st_t2),
        "st_cls_t1": _classes(pair.st_t1, table),
        "st_cls_t2": _classes(pair.st_t2, table),
        "st_mask_t1": torch.from_numpy(pair.seg_t1 == ROOF),
        "st_mask_t2": torch.from_numpy(pair.seg_t2 == ROOF) & ~ignore,
        "bt": _field(pair.bt_flow),
        "bt_cls": _classes(pair.bt_flow, table),
        "bt_mask": torch.from_numpy(pair.bt_valid.astype(bool)),
    }


def collate(examples):
    return {k: torch.stack([e[k] for e in examples]) for k in examples[0]}


def batches(pairs, table, facade_mode, batch_size):
    """Sequential un-augmented batches, for evaluation."""
    for i in range(0, len(pairs), batch_size):
        yield collate([to_example(p, table, facade_mode) for p in pairs[i:i + batch_size]])
