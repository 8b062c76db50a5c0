"""Per-axis binning of dense offset/flow fields into 10 categories."""
from dataclasses import dataclass

import numpy as np
import torch

from .errors import EncodingError

DEFAULT_EDGES = (-96.0, -48.0, -24.0, -8.0, 0.0, 8.0, 24.0, 48.0, 96.0)
DEFAULT_REPRESENTATIVES = (-120.0, -72.0, -36.0, -16.0, -4.0, 4.0, 16.0, 36.0, 72.0, 120.0)


@dataclass
class VectorField:
    """Per-pixel (vx, vy) in pixels; vx along columns, vy along rows."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        self.vx = np.asarray(self.vx, dtype=np.float32)
        self.vy = np.asarray(self.vy, dtype=np.float32)
        if self.vx.shape != self.vy.shape:
            raise ValueError(f"component shapes differ: {self.vx.shape} vs {self.vy.shape}")

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, np.float32), np.zeros(shape, np.float32))

    @classmethod
    def from_array(cls, arr):
        """From an (H, W, 2) array ordered (vx, vy)."""
        return cls(arr[..., 0], arr[..., 1])

    @property
    def shape(self):
        return self.vx.shape

    def stack(self):
        return np.stack([self.vx, self.vy], axis=-1)

    def is_finite(self):
        return bool(np.isfinite(self.vx).all() and np.isfinite(self.vy).all())


@dataclass(frozen=True)
class BinTable:
    edges: tuple = DEFAULT_EDGES
    representatives: tuple = DEFAULT_REPRESENTATIVES

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(float(e) for e in self.edges))
        object.__setattr__(self, "representatives", tuple(float(r) for r in self.representatives))
        self.validate()

    @property
    def num_bins(self):
        return len(self.edges) + 1

    def validate(self):
        e = np.asarray(self.edges)
        if len(self.representatives) != len(self.edges) + 1:
            raise EncodingError("need exactly one representative per bin")
        if np.any(np.diff(e) <= 0):
            raise EncodingError(f"bin edges must be strictly increasing: {self.edges}")
        for k, r in enumerate(self.representatives):
            lo = -np.inf if k == 0 else self.edges[k - 1]
            hi = np.inf if k == len(self.edges) else self.edges[k]
            if not lo < r <= hi:
                raise EncodingError(f"representative {r} outside bin {k} ({lo}, {hi}]")

    def half_widths(self):
        """Half-width of each finite bin; inf for the two open outer bins."""
        e = np.asarray(self.edges)
        return np.concatenate([[np.inf], np.diff(e) / 2.0, [np.inf]])


def encode_values(values, table=BinTable()):
    """Category index of each value; bin k holds (edges[k-1], edges[k]]."""
    return np.searchsorted(np.asarray(table.edges), np.asarray(values, dtype=np.float64), side="left").astype(np.int64)


def encode(field, table=BinTable()):
    return encode_values(field.vx, table), encode_values(field.vy, table)


def encode_tensor(values, table=BinTable()):
    edges = torch.tensor(table.edges, dtype=values.dtype, device=values.device)
    return torch.bucketize(values, edges, right=False)


def decode_values(categories, table=BinTable()):
    cat = np.asarray(categories)
    if cat.size and (cat.min() < 0 or cat.max() >= table.num_bins):
        raise EncodingError(f"categories must lie in [0, {table.num_bins - 1}]")
    return np.asarray(table.representatives, dtype=np.float32)[cat]


def decode(cat_x, cat_y, table=BinTable()):
    return VectorField(decode_values(cat_x, table), decode_values(cat_y, table))
