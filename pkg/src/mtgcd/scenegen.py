"""Procedural bi-temporal off-nadir scenes with exact labels.

Buildings are flat-roofed convex prisms. Seen from a tilted camera, the roof
of a building of height h is its footprint translated by
``d = h * tan(tilt) * (sin(azimuth), cos(azimuth))`` and the visible walls
fill the sweep of the footprint along that displacement.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry, labelgen
from .errors import GenerationError
from .vecfield import VectorField

BACKGROUND_RGB = (84.0, 104.0, 72.0)
NOISE_AMPLITUDE = 10.0


@dataclass(frozen=True)
class CameraSpec:
    tilt: float = 0.0
    azimuth: float = 0.0
    resolution: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tilt <= 0.9:
            raise GenerationError(f"tilt {self.tilt} outside [0, 0.9]")
        if self.resolution <= 0:
            raise GenerationError("resolution must be positive")

    def displacement(self, height):
        s = height * math.tan(self.tilt) / self.resolution
        d = np.array([s * math.sin(self.azimuth), s * math.cos(self.azimuth)])
        if not np.all(np.isfinite(d)):
            raise GenerationError(f"non-finite displacement for height {height}")
        return d


@dataclass(frozen=True)
class BuildingSpec:
    id: int
    footprint: tuple
    height: float
    present_t1: bool = True
    present_t2: bool = True
    roof_shade: int = 200
    facade_shade: int = 120

    def __post_init__(self):
        poly = geometry.orient_ccw(np.asarray(self.footprint, dtype=float))
        object.__setattr__(self, "footprint", tuple((float(x), float(y)) for x, y in poly))
        if self.id <= 0:
            raise GenerationError("building ids start at 1; 0 is background")
        if not geometry.is_convex(poly):
            raise GenerationError(f"building {self.id}: footprint is not convex")
        if geometry.area(poly) < 4.0:
            raise GenerationError(f"building {self.id}: footprint area below 4 px^2")
        if not self.facade_shade < self.roof_shade:
            raise GenerationError(f"building {self.id}: facade must render darker than roof")
        if not (self.present_t1 or self.present_t2):
            raise GenerationError(f"building {self.id}: absent in both epochs")

    @property
    def polygon(self):
        return np.asarray(self.footprint, dtype=float)

    @property
    def changed(self):
        return self.present_t1 != self.present_t2

    def present(self, epoch):
        return self.present_t1 if epoch == 1 else self.present_t2


@dataclass(frozen=True)
class SceneSpec:
    image_size: tuple = (128, 128)
    buildings: tuple = ()
    camera_t1: CameraSpec = field(default_factory=CameraSpec)
    camera_t2: CameraSpec = field(default_factory=CameraSpec)
    background_noise_seed: int = 0

    def camera(self, epoch):
        return self.camera_t1 if epoch == 1 else self.camera_t2

    def presence(self):
        return {b.id: (b.present_t1, b.present_t2) for b in self.buildings}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_size=tuple(d["image_size"]),
            buildings=tuple(BuildingSpec(**{**b, "footprint": tuple(map(tuple, b["footprint"]))}) for b in d["buildings"]),
            camera_t1=CameraSpec(**d["camera_t1"]),
            camera_t2=CameraSpec(**d["camera_t2"]),
            background_noise_seed=int(d["background_noise_seed"]),
        )


@dataclass
class InstanceRender:
    roof: np.ndarray
    sweep: np.ndarray  # footprint swept along d: roof plus visible walls
    footprint: np.ndarray
    offset: np.ndarray

    def roof_mask(self, shape):
        return geometry.rasterize(self.roof, shape)

    def facade_mask(self, shape):
        return geometry.rasterize(self.sweep, shape) & ~self.roof_mask(shape)

    def footprint_mask(self, shape):
        return geometry.rasterize(self.footprint, shape)


@dataclass
class Render:
    image: np.ndarray
    roof_ids: np.ndarray
    facade_ids: np.ndarray
    footprint_ids: np.ndarray
    offsets: dict


@dataclass
class SamplePair:
    image_t1: np.ndarray
    image_t2: np.ndarray
    seg_t1: np.ndarray
    seg_t2: np.ndarray
    st_t1: VectorField
    st_t2: VectorField
    bt_flow: VectorField
    change_mask: np.ndarray
    ignore_mask: np.ndarray  # auxiliary t2 labels only; change supervision keeps these pixels
    bt_valid: np.ndarray  # t1 roofs of unchanged buildings, the only supervised BT-flow pixels
    instances: labelgen.InstanceMaps | None = None
    scene: SceneSpec | None = None

    @property
    def shape(self):
        return self.change_mask.shape


def project_building(b, cam, shape=None):
    d = cam.displacement(b.height)
    foot = b.polygon
    render = InstanceRender(roof=foot + d, sweep=geometry.minkowski_segment(foot, d), footprint=foot.copy(), offset=d)
    if shape is not None and not geometry.inside_frame(render.sweep, shape):
        raise GenerationError(f"building {b.id} leaves the frame")
    return render


def _epoch_noise(scene, epoch):
    rng = np.random.default_rng([scene.background_noise_seed, epoch])
    h, w = scene.image_size
    return rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(h, w, 3))


def render_scene(scene, epoch):
    shape = tuple(scene.image_size)
    roof_ids = np.zeros(shape, np.int32)
    facade_ids = np.zeros(shape, np.int32)
    foot_ids = np.zeros(shape, np.int32)
    offsets = {}
    shades = {}
    cam = scene.camera(epoch)
    present = sorted((b for b in scene.buildings if b.present(epoch)), key=lambda b: b.id)
    projections = []
    for b in present:
        r = project_building(b, cam, shape)
        projections.append((b, r))
        offsets[b.id] = r.offset
        shades[b.id] = (b.roof_shade, b.facade_shade)
    for b, r in projections:
        facade_ids[r.facade_mask(shape)] = b.id
        foot_ids[r.footprint_mask(shape)] = b.id
    for b, r in projections:
        roof_ids[r.roof_mask(shape)] = b.id
    facade_ids[roof_ids > 0] = 0

    image = np.empty(shape + (3,), np.float64)
    image[:] = BACKGROUND_RGB
    for bid, (roof_shade, facade_shade) in shades.items():
        image[facade_ids == bid] = facade_shade
        image[roof_ids == bid] = roof_shade
    image = np.clip(np.rint(image + _epoch_noise(scene, epoch)), 0, 255).astype(np.uint8)
    return Render(image, roof_ids, facade_ids, foot_ids, offsets)


def make_pair(scene):
    r1 = render_scene(scene, 1)
    r2 = render_scene(scene, 2)
    presence = scene.presence()
    inst = labelgen.InstanceMaps(
        roof_ids_t1=r1.roof_ids, roof_ids_t2=r2.roof_ids,
        footprint_ids_t1=r1.footprint_ids, footprint_ids_t2=r2.footprint_ids,
        facade_ids_t1=r1.facade_ids, facade_ids_t2=r2.facade_ids,
        offsets_t1=r1.offsets, offsets_t2=r2.offsets,
    )
    return SamplePair(
        image_t1=r1.image,
        image_t2=r2.image,
        seg_t1=labelgen.derive_segmentation(r1),
        seg_t2=labelgen.derive_segmentation(r2),
        st_t1=labelgen.derive_st_offsets(r1.roof_ids, r1.offsets),
        st_t2=labelgen.derive_st_offsets(r2.roof_ids, r2.offsets),
        bt_flow=labelgen.derive_bt_flows(r1.roof_ids, r2.roof_ids, r1.offsets, r2.offsets, presence),
        change_mask=labelgen.derive_change_mask(presence, r1.roof_ids, r2.roof_ids),
        ignore_mask=labelgen.derive_ignore_mask(presence, r2.roof_ids, r2.facade_ids),
        bt_valid=labelgen.unchanged_roof_mask(presence, r1.roof_ids),
        instances=inst,
        scene=scene,
    )


@dataclass
class SceneParams:
    """Distribution of random scenes; the desk-scale defaults."""

    image_size: tuple = (128, 128)
    n_buildings: tuple = (2, 6)
    height: tuple = (5.0, 30.0)
    tilt: tuple = (0.0, 0.6)
    side: tuple = (10.0, 28.0)
    change_prob: float = 0.4
    shape: str = "rectangle"  # or "convex"
    max_tries: int = 200


def _sample_footprint(rng, params):
    h, w = params.image_size
    if params.shape == "rectangle":
        sw, sh = rng.uniform(*params.side, size=2)
        x0 = rng.uniform(0, w - sw)
        y0 = rng.uniform(0, h - sh)
        x0, y0, sw, sh = (float(np.round(v)) for v in (x0, y0, sw, sh))
        return np.array([[x0, y0], [x0 + sw, y0], [x0 + sw, y0 + sh], [x0, y0 + sh]])
    if params.shape == "convex":
        r = rng.uniform(*params.side) / 2
        cx, cy = rng.uniform(r, w - r), rng.uniform(r, h - r)
        ang = np.sort(rng.uniform(0, 2 * np.pi, size=int(rng.integers(3, 8))))
        pts = np.stack([cx + r * np.cos(ang), cy + r * np.sin(ang)], axis=1)
        hull = geometry.convex_hull(pts)
        if len(hull) < 3:
            raise GenerationError("degenerate convex footprint")
        return hull
    raise ValueError(f"unknown footprint shape {params.shape!r}")


def random_scene(rng, params=None):
    """Sample a valid SceneSpec; buildings that cannot be placed are resampled."""
    params = params or SceneParams()
    shape = tuple(params.image_size)
    cams = [CameraSpec(tilt=float(rng.uniform(*params.tilt)), azimuth=float(rng.uniform(0, 2 * np.pi))) for _ in range(2)]
    n = int(rng.integers(params.n_buildings[0], params.n_buildings[1] + 1))
    buildings = []
    occupied = {(e, kind): np.zeros(shape, bool) for e in (1, 2) for kind in ("roof", "foot")}
    for _ in range(params.max_tries):
        if len(buildings) == n:
            break
        try:
            foot = _sample_footprint(rng, params)
            roof_shade = int(rng.integers(150, 236))
            if rng.uniform() < params.change_prob:
                p1 = bool(rng.uniform() < 0.5)
                presence = (p1, not p1)
            else:
                presence = (True, True)
            b = BuildingSpec(
                id=len(buildings) + 1, footprint=tuple(map(tuple, foot)), height=float(rng.uniform(*params.height)),
                present_t1=presence[0], present_t2=presence[1], roof_shade=roof_shade,
                facade_shade=max(20, roof_shade - int(rng.integers(50, 101))),
            )
            masks = {}
            for e, cam in zip((1, 2), cams):
                r = project_building(b, cam, shape)  # both epochs must fit, even if absent in one
                if b.present(e):
                    masks[(e, "roof")] = r.roof_mask(shape)
                    masks[(e, "foot")] = r.footprint_mask(shape)
            if any((m & occupied[k]).any() for k, m in masks.items()):
                raise GenerationError("overlaps an existing building")
        except GenerationError:
            continue
        for k, m in masks.items():
            occupied[k] |= m
        buildings.append(b)
    return SceneSpec(
        image_size=shape, buildings=tuple(buildings), camera_t1=cams[0], camera_t2=cams[1],
        background_noise_seed=int(rng.integers(0, 2**31 - 1)),
    )


def _write_f32(path, vf):
    np.ascontiguousarray(vf.stack(), dtype="<f4").tofile(path)


def _read_f32(path, shape):
    return VectorField.from_array(np.fromfile(path, dtype="<f4").reshape(shape + (2,)))


def save_pair(pair, directory):
    """Write a pair in the on-disk layout (PNG rasters, raw float32 fields, meta.json)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h, w = pair.shape
    Image.fromarray(pair.image_t1).save(d / "img_t1.png")
    Image.fromarray(pair.image_t2).save(d / "img_t2.png")
    Image.fromarray(pair.seg_t1.astype(np.uint8)).save(d / "seg_t1.png")
    seg2 = pair.seg_t2.astype(np.uint8).copy()
    seg2[pair.ignore_mask] = 255
    Image.fromarray(seg2).save(d / "seg_t2.png")
    Image.fromarray(pair.change_mask.astype(np.uint8)).save(d / "change.png")
    Image.fromarray(pair.bt_valid.astype(np.uint8)).save(d / "bt_valid.png")
    _write_f32(d / "st_t1.f32", pair.st_t1)
    _write_f32(d / "st_t2.f32", pair.st_t2)
    _write_f32(d / "bt.f32", pair.bt_flow)
    meta = {"height": h, "width": w, "channels": 2, "scene": pair.scene.to_dict() if pair.scene else None}
    (d / "meta.json").write_text(json.dumps(meta, indent=1))


def load_pair(directory):
    d = Path(directory)
    try:
        meta = json.loads((d / "meta.json").read_text())
        shape = (int(meta["height"]), int(meta["width"]))
        seg_t1 = np.array(Image.open(d / "seg_t1.png"))
        seg_t2 = np.array(Image.open(d / "seg_t2.png"))
        change = np.array(Image.open(d / "change.png"))
        ignore = seg_t2 == 255
        seg_t2 = np.where(ignore, 0, seg_t2).astype(np.uint8)
        bt_valid_path = d / "bt_valid.png"
        bt_valid = np.array(Image.open(bt_valid_path)).astype(bool) if bt_valid_path.exists() else (seg_t1 == 1)
        return SamplePair(
            image_t1=np.array(Image.open(d / "img_t1.png").convert("RGB")),
            image_t2=np.array(Image.open(d / "img_t2.png").convert("RGB")),
            seg_t1=seg_t1, seg_t2=seg_t2,
            st_t1=_read_f32(d / "st_t1.f32", shape),
            st_t2=_read_f32(d / "st_t2.f32", shape),
            bt_flow=_read_f32(d / "bt.f32", shape),
            change_mask=(change == 1),
            ignore_mask=ignore,
            bt_valid=bt_valid,
            scene=SceneSpec.from_dict(meta["scene"]) if meta.get("scene") else None,
        )
    except (OSError, ValueError, KeyError) as e:
        raise OSError(f"cannot read sample pair at {d}: {e}") from e
