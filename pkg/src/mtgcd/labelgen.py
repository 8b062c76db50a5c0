"""Auxiliary labels derived from instance renders and per-building displacements."""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import LabelError
from .vecfield import VectorField

BACKGROUND, ROOF, FACADE = 0, 1, 2


@dataclass
class InstanceMaps:
    roof_ids_t1: np.ndarray
    roof_ids_t2: np.ndarray
    footprint_ids_t1: np.ndarray
    footprint_ids_t2: np.ndarray
    facade_ids_t1: np.ndarray
    facade_ids_t2: np.ndarray
    offsets_t1: dict
    offsets_t2: dict

    def roof_ids(self, epoch):
        return self.roof_ids_t1 if epoch == 1 else self.roof_ids_t2

    def footprint_ids(self, epoch):
        return self.footprint_ids_t1 if epoch == 1 else self.footprint_ids_t2

    def offsets(self, epoch):
        return self.offsets_t1 if epoch == 1 else self.offsets_t2


def derive_segmentation(render):
    seg = np.zeros(render.roof_ids.shape, np.uint8)
    seg[render.facade_ids > 0] = FACADE
    seg[render.roof_ids > 0] = ROOF
    return seg


def _constant_per_id(ids, vectors):
    """Paint a constant 2-vector per instance id; background stays zero."""
    field = VectorField.zeros(ids.shape)
    for bid in np.unique(ids):
        if bid == 0:
            continue
        if bid not in vectors:
            raise LabelError(f"no vector for building id {bid}")
        m = ids == bid
        v = np.asarray(vectors[bid], np.float32)
        field.vx[m], field.vy[m] = v[0], v[1]
    return field


def derive_st_offsets(roof_ids, offsets):
    """Roof-to-footprint offsets: -d on each roof pixel, zero elsewhere."""
    return _constant_per_id(roof_ids, {k: -np.asarray(v, np.float32) for k, v in offsets.items()})


def _unchanged(presence):
    return {bid for bid, (p1, p2) in presence.items() if p1 and p2}


def derive_bt_flows(roof_ids_t1, roof_ids_t2, offsets_t1, offsets_t2, presence):
    """Flow matching each unchanged t1 roof pixel to the same roof in t2.

    Both epochs share one footprint, so the flow is the difference of the two
    ST-offsets and is constant per building.
    """
    keep = _unchanged(presence)
    flows = {}
    for bid in keep:
        if bid in offsets_t1 and bid in offsets_t2:
            # float32 first so the stored flow equals st_t1 - st_t2 bit for bit
            st1 = -np.asarray(offsets_t1[bid], np.float32)
            st2 = -np.asarray(offsets_t2[bid], np.float32)
            flows[bid] = st1 - st2
    ids = np.where(np.isin(roof_ids_t1, list(flows)), roof_ids_t1, 0)
    return _constant_per_id(ids, flows)


def unchanged_roof_mask(presence, roof_ids_t1):
    return np.isin(roof_ids_t1, list(_unchanged(presence))) & (roof_ids_t1 > 0)


def changed_ids(presence):
    return [bid for bid, (p1, p2) in presence.items() if p1 != p2]


def derive_change_mask(presence, roof_ids_t1, roof_ids_t2):
    """Union of the changed buildings' roof regions in both epochs."""
    changed = changed_ids(presence)
    return np.isin(roof_ids_t1, changed) | np.isin(roof_ids_t2, changed)


def derive_ignore_mask(presence, roof_ids_t2, facade_ids_t2=None):
    """t2 auxiliary-label pixels (roof and facade) of changed buildings.

    Removed buildings have no t2 pixels, so only additions contribute.
    """
    changed = changed_ids(presence)
    mask = np.isin(roof_ids_t2, changed) & (roof_ids_t2 > 0)
    if facade_ids_t2 is not None:
        mask |= np.isin(facade_ids_t2, changed) & (facade_ids_t2 > 0)
    return mask


def _shift(mask, dy, dx):
    """Translate a boolean mask by whole pixels, filling with False."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = mask[ys, xs]
    return out


def boundary_band(mask):
    """Pixels within one pixel (8-neighbourhood) of the mask boundary."""
    st = np.ones((3, 3), bool)
    return ndimage.binary_dilation(mask, st) & ~ndimage.binary_erosion(mask, st, border_value=0)


def warp_mismatch(roof_mask, footprint_mask, offset):
    """Pixels where the roof shifted by the rounded offset disagrees with the footprint,
    outside the 1 px boundary band. Pixels whose source lies off-frame are not compared."""
    dx, dy = (int(np.rint(v)) for v in offset)
    h, w = roof_mask.shape
    warped = _shift(roof_mask, dy, dx)
    seen = _shift(np.ones((h, w), bool), dy, dx)
    bad = (warped != footprint_mask) & seen
    return bad & ~boundary_band(footprint_mask)


def check_sample(sample):
    """Raster-level label consistency; returns a list of violations (empty when sound).

    Works on augmented samples too, as long as instance maps travelled with them.
    """
    problems = []
    inst = sample.instances
    if inst is None:
        return ["sample carries no instance maps"]
    for epoch, st in ((1, sample.st_t1), (2, sample.st_t2)):
        roof_ids, foot_ids = inst.roof_ids(epoch), inst.footprint_ids(epoch)
        for bid in np.unique(roof_ids):
            if bid == 0:
                continue
            m = roof_ids == bid
            vx, vy = np.unique(st.vx[m]), np.unique(st.vy[m])
            if len(vx) != 1 or len(vy) != 1:
                problems.append(f"t{epoch} building {bid}: ST-offset not constant")
                continue
            if warp_mismatch(m, foot_ids == bid, (vx[0], vy[0])).any():
                problems.append(f"t{epoch} building {bid}: warped roof does not reproduce footprint")
        off_roof = roof_ids == 0
        if (st.vx[off_roof] != 0).any() or (st.vy[off_roof] != 0).any():
            problems.append(f"t{epoch}: non-zero ST-offset off roof")
    r1, r2 = inst.roof_ids_t1, inst.roof_ids_t2
    for bid in np.unique(r1[sample.bt_valid]):
        m = sample.bt_valid & (r1 == bid)
        m2 = r2 == bid
        if not m2.any():
            continue
        st2x, st2y = sample.st_t2.vx[m2][0], sample.st_t2.vy[m2][0]
        if not (np.array_equal(sample.bt_flow.vx[m], sample.st_t1.vx[m] - st2x)
                and np.array_equal(sample.bt_flow.vy[m], sample.st_t1.vy[m] - st2y)):
            problems.append(f"building {bid}: BT-flow != ST(t1) - ST(t2)")
        if warp_mismatch(m & (r1 == bid), m2, (sample.bt_flow.vx[m][0], sample.bt_flow.vy[m][0])).any():
            problems.append(f"building {bid}: BT-flow does not carry the t1 roof onto the t2 roof")
    if (sample.bt_flow.vx[~sample.bt_valid] != 0).any() or (sample.bt_flow.vy[~sample.bt_valid] != 0).any():
        problems.append("non-zero BT-flow outside unchanged t1 roofs")
    if (sample.seg_t1 == ROOF).sum() != (r1 > 0).sum() or (sample.seg_t2 == ROOF).sum() != (r2 > 0).sum():
        problems.append("segmentation roof class disagrees with instance maps")
    return problems
