"""Paired geometric and photometric augmentation.

Geometric transforms move every raster of a sample together and remap the
(vx, vy) components of offset and flow fields so labels stay coherent.
Coordinates: x along columns, y along rows (downwards).
"""
import dataclasses

import numpy as np

from ..errors import ConfigError
from ..labelgen import InstanceMaps
from ..vecfield import VectorField

_RASTERS = ("image_t1", "image_t2", "seg_t1", "seg_t2", "change_mask", "ignore_mask", "bt_valid")
_FIELDS = ("st_t1", "st_t2", "bt_flow")
_INSTANCE_RASTERS = ("roof_ids_t1", "roof_ids_t2", "footprint_ids_t1", "footprint_ids_t2", "facade_ids_t1", "facade_ids_t2")


def hflip_vec(vx, vy):
    return -vx, vy


def vflip_vec(vx, vy):
    return vx, -vy


def rot90_vec(vx, vy):
    """Vector remap for a 90 degree clockwise turn of the image, (vx, vy) -> (-vy, vx)."""
    return -vy, vx


def _geometric(sample, raster_fn, vec_fn):
    updates = {k: np.ascontiguousarray(raster_fn(getattr(sample, k))) for k in _RASTERS}
    for k in _FIELDS:
        f = getattr(sample, k)
        vx, vy = vec_fn(raster_fn(f.vx), raster_fn(f.vy))
        updates[k] = VectorField(np.ascontiguousarray(vx), np.ascontiguousarray(vy))
    inst = sample.instances
    if inst is not None:
        maps = {k: np.ascontiguousarray(raster_fn(getattr(inst, k))) for k in _INSTANCE_RASTERS}
        for k in ("offsets_t1", "offsets_t2"):
            # offsets are roof displacements d; they transform like any other vector
            maps[k] = {bid: np.array(vec_fn(*np.asarray(d, float))) for bid, d in getattr(inst, k).items()}
        updates["instances"] = InstanceMaps(**maps)
    return dataclasses.replace(sample, **updates)


def hflip(sample):
    return _geometric(sample, lambda a: a[:, ::-1], hflip_vec)


def vflip(sample):
    return _geometric(sample, lambda a: a[::-1], vflip_vec)


def rot90(sample, k=1):
    """Rotate k quarter turns clockwise."""
    out = sample
    for _ in range(k % 4):
        out = _geometric(out, lambda a: np.rot90(a, k=-1), rot90_vec)
    return out


def crop(sample, top, left, size):
    h, w = sample.shape
    if size > h or size > w:
        raise ConfigError(f"crop {size} larger than image {h}x{w}")
    if (top, left, size) == (0, 0, h) and h == w:
        return sample
    return _geometric(sample, lambda a: a[top:top + size, left:left + size], lambda vx, vy: (vx, vy))


def color_jitter(image, rng, brightness=0.2, contrast=0.2, saturation=0.2):
    img = image.astype(np.float64)
    img = img * rng.uniform(1 - brightness, 1 + brightness)
    gray = img @ np.array([0.299, 0.587, 0.114])
    img = gray.mean() + (img - gray.mean()) * rng.uniform(1 - contrast, 1 + contrast)
    gray = (img @ np.array([0.299, 0.587, 0.114]))[..., None]
    img = gray + (img - gray) * rng.uniform(1 - saturation, 1 + saturation)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def augment(sample, rng, cfg, crop_size=None):
    """Random crop, flips, quarter-turn rotation and per-epoch colour jitter."""
    h, w = sample.shape
    size = crop_size or min(h, w)
    if size > h or size > w:
        raise ConfigError(f"crop {size} larger than image {h}x{w}")
    if size < h or size < w:
        sample = crop(sample, int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1)), size)
    if cfg.hflip and rng.uniform() < 0.5:
        sample = hflip(sample)
    if cfg.vflip and rng.uniform() < 0.5:
        sample = vflip(sample)
    if cfg.rotate:
        # 90, 180, 270 or 360 degrees
        sample = rot90(sample, int(rng.integers(1, 5)))
    if cfg.color_jitter:
        sample = dataclasses.replace(
            sample,
            image_t1=color_jitter(sample.image_t1, rng, cfg.brightness, cfg.contrast, cfg.saturation),
            image_t2=color_jitter(sample.image_t2, rng, cfg.brightness, cfg.contrast, cfg.saturation),
        )
    return sample
