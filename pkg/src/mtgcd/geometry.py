"""Convex polygon helpers.

Polygons are (N, 2) float arrays of (x, y) vertices where x runs along image
columns and y along image rows. Rasterization marks a pixel (row i, col j)
when its centre (j + 0.5, i + 0.5) falls inside the polygon.
"""
import numpy as np

_EPS = 1e-9


def cross(o, a, b):
    return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])


def convex_hull(points):
    """Andrew's monotone chain; returns vertices with positive signed area, no collinear points."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross(np.array(out[-2]), np.array(out[-1]), np.array(p)) <= _EPS:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1], dtype=float)


def signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def area(poly):
    return abs(signed_area(poly))


def perimeter(poly):
    return float(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1).sum())


def centroid(poly):
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    c = x * yn - xn * y
    a = c.sum() / 2.0
    return np.array([((x + xn) * c).sum() / (6 * a), ((y + yn) * c).sum() / (6 * a)])


def is_convex(poly):
    n = len(poly)
    if n < 3:
        return False
    turns = cross(poly, np.roll(poly, -1, axis=0), np.roll(poly, -2, axis=0))
    return bool(np.all(turns > _EPS) or np.all(turns < -_EPS))


def orient_ccw(poly):
    """Return the polygon ordered with positive signed area."""
    poly = np.asarray(poly, dtype=float)
    return poly if signed_area(poly) > 0 else poly[::-1].copy()


def contains(poly, points, tol=_EPS):
    """Vectorised point-in-convex-polygon test (boundary counts as inside)."""
    poly = orient_ccw(poly)
    pts = np.asarray(points, dtype=float)
    inside = np.ones(pts.shape[:-1], dtype=bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        inside &= cross(a, b, pts) >= -tol
    return inside


def minkowski_segment(poly, d):
    """Minkowski sum of a convex polygon with the segment from 0 to d."""
    poly = np.asarray(poly, dtype=float)
    return convex_hull(np.vstack([poly, poly + np.asarray(d, dtype=float)]))


def inside_frame(poly, shape):
    h, w = shape
    return bool(poly[:, 0].min() >= 0 and poly[:, 1].min() >= 0 and poly[:, 0].max() <= w and poly[:, 1].max() <= h)


def rasterize(poly, shape):
    """Boolean (H, W) mask of pixels whose centres lie inside the convex polygon."""
    h, w = shape
    mask = np.zeros((h, w), dtype=bool)
    poly = np.asarray(poly, dtype=float)
    if len(poly) < 3 or area(poly) <= _EPS:
        return mask
    x0 = max(int(np.floor(poly[:, 0].min())), 0)
    x1 = min(int(np.ceil(poly[:, 0].max())), w)
    y0 = max(int(np.floor(poly[:, 1].min())), 0)
    y1 = min(int(np.ceil(poly[:, 1].max())), h)
    if x0 >= x1 or y0 >= y1:
        return mask
    ys, xs = np.mgrid[y0:y1, x0:x1]
    centres = np.stack([xs + 0.5, ys + 0.5], axis=-1)
    mask[y0:y1, x0:x1] = contains(poly, centres)
    return mask
