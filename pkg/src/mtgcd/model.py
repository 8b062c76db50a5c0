"""Multi-task guided change detection network.

Stage 1 encodes both epochs with one shared encoder. Stage 2 predicts the
auxiliary tasks (roof/facade segmentation and roof-to-footprint offsets per
epoch, roof matching flow across epochs). Stage 3 gates the auxiliary task
features with sigmoid attention, fuses them, and decodes the fine change mask.
"""
import math
from dataclasses import dataclass, fields
from typing import Literal, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass
class ModelConfig:
    in_channels: int = 3
    encoder_width: int = 32
    stride: int = 8
    c_sh: int = 64
    tstl_channels: int = 64  # 512 in the full-size setting
    c_k: int = 64
    c_att: int = 128
    seg_classes: int = 3
    offset_bins: int = 10
    norm_first_layer: Literal["batch", "instance"] = "instance"
    pyramid_pooling: bool = False
    aux_heads: bool = True
    use_mtfgm: bool = True
    coarse_change: bool = False
    decoder_upsample: int = 2

    @property
    def c_cat(self):
        return 2 * self.c_sh

    def validate(self):
        if self.stride < 2 or self.stride & (self.stride - 1) or self.stride > 32:
            raise ConfigError(f"stride must be a power of two in [2, 32], got {self.stride}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type is int and v <= 0:
                raise ConfigError(f"{f.name} must be positive, got {v}")
        if self.use_mtfgm and not self.aux_heads:
            raise ConfigError("the feature guidance module needs the auxiliary branches")


def _norm(kind, ch):
    if kind == "instance":
        return nn.InstanceNorm2d(ch, affine=True)
    return nn.BatchNorm2d(ch)


class ConvNormAct(nn.Sequential):
    def __init__(self, cin, cout, k=3, stride=1, dilation=1, norm="batch", act=True):
        layers = [nn.Conv2d(cin, cout, k, stride, padding=dilation * (k // 2), dilation=dilation, bias=False),
                  _norm(norm, cout)]
        if act:
            layers.append(nn.ReLU(inplace=True))
        super().__init__(*layers)


class ResBlock(nn.Module):
    def __init__(self, cin, cout, stride=1, dilation=1):
        super().__init__()
        self.conv1 = ConvNormAct(cin, cout, stride=stride, dilation=dilation)
        self.conv2 = ConvNormAct(cout, cout, dilation=dilation, act=False)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = ConvNormAct(cin, cout, k=1, stride=stride, act=False)

    def forward(self, x):
        identity = x if self.skip is None else self.skip(x)
        return F.relu(self.conv2(self.conv1(x)) + identity)


class PyramidPooling(nn.Module):
    def __init__(self, ch, bins=(1, 2, 4)):
        super().__init__()
        inner = max(ch // len(bins), 1)
        self.bins = bins
        self.reduce = nn.ModuleList(ConvNormAct(ch, inner, k=1) for _ in bins)
        self.fuse = ConvNormAct(ch + inner * len(bins), ch, k=1)

    def forward(self, x):
        size = x.shape[-2:]
        pooled = [F.interpolate(conv(F.adaptive_avg_pool2d(x, b)), size=size, mode="bilinear", align_corners=False)
                  for b, conv in zip(self.bins, self.reduce)]
        return self.fuse(torch.cat([x] + pooled, dim=1))


class Encoder(nn.Module):
    """Stem plus four residual stages; downsampling happens as early as the stride allows."""

    def __init__(self, cfg):
        super().__init__()
        w = cfg.encoder_width
        downs = int(math.log2(cfg.stride))
        self.stem = ConvNormAct(cfg.in_channels, w, stride=2, norm=cfg.norm_first_layer)
        widths = [w, 2 * w, 2 * w, cfg.c_sh]
        stages, cin = [], w
        for i, cout in enumerate(widths):
            stride = 2 if i < downs - 1 else 1
            dilation = 2 if i == len(widths) - 1 else 1
            stages.append(ResBlock(cin, cout, stride=stride, dilation=dilation))
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.ppm = PyramidPooling(cfg.c_sh) if cfg.pyramid_pooling else None

    def forward(self, x):
        x = self.stages(self.stem(x))
        return self.ppm(x) if self.ppm is not None else x


class TSTL(ConvNormAct):
    """Task-specific transition layer: 3x3 conv, batch norm, ReLU."""

    def __init__(self, cin, cout):
        super().__init__(cin, cout, k=3)


class FCNHead(nn.Sequential):
    def __init__(self, cin, num_classes):
        inner = max(cin // 4, 8)
        super().__init__(ConvNormAct(cin, inner), nn.Conv2d(inner, num_classes, 1))


class Squeeze(ConvNormAct):
    def __init__(self, cin, cout, act=True):
        super().__init__(cin, cout, k=1, act=act)


class TaskAttention(nn.Module):
    """Reduced feature times a sigmoid gate, both squeezed from the same input."""

    def __init__(self, cin, c_k):
        super().__init__()
        self.reduce = Squeeze(cin, c_k)
        self.weight = Squeeze(cin, c_k, act=False)

    def forward(self, x, gate=None):
        if gate is None:
            gate = torch.sigmoid(self.weight(x))
        return self.reduce(x) * gate, gate


class MTFGM(nn.Module):
    """Multi-task feature guidance: per-task gated attention features, then a fusing squeeze."""

    def __init__(self, c_task, c_k, c_att):
        super().__init__()
        self.c_task = c_task
        self.seg = TaskAttention(2 * c_task, c_k)
        self.st = TaskAttention(2 * c_task, c_k)
        self.bt = TaskAttention(c_task, c_k)
        self.fuse = Squeeze(3 * c_k, c_att)

    def forward(self, f_seg_t1, f_seg_t2, f_st_t1, f_st_t2, f_bt, gates=None, return_gates=False):
        inputs = {
            "seg": torch.cat([f_seg_t1, f_seg_t2], dim=1),
            "st": torch.cat([f_st_t1, f_st_t2], dim=1),
            "bt": f_bt,
        }
        if any(v.shape[1] != (self.c_task if k == "bt" else 2 * self.c_task) for k, v in inputs.items()):
            raise ConfigError(f"channel mismatch: {[tuple(v.shape) for v in inputs.values()]}")
        if len({v.shape[-2:] for v in inputs.values()}) != 1:
            raise ConfigError("task features differ in spatial size")
        gates = gates or {}
        att, used = [], {}
        for name in ("seg", "st", "bt"):
            a, g = getattr(self, name)(inputs[name], gates.get(name))
            att.append(a)
            used[name] = g
        f_att = self.fuse(torch.cat(att, dim=1))
        return (f_att, used) if return_gates else f_att


@dataclass
class Outputs:
    change: torch.Tensor
    seg_t1: Optional[torch.Tensor] = None
    seg_t2: Optional[torch.Tensor] = None
    st_t1_x: Optional[torch.Tensor] = None
    st_t1_y: Optional[torch.Tensor] = None
    st_t2_x: Optional[torch.Tensor] = None
    st_t2_y: Optional[torch.Tensor] = None
    bt_x: Optional[torch.Tensor] = None
    bt_y: Optional[torch.Tensor] = None
    change_coarse: Optional[torch.Tensor] = None

    def items(self):
        return [(f.name, getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None]


class MTGCDNet(nn.Module):
    """Two-image change detector with auxiliary parsing and matching branches.

    In regression mode the offset/flow heads emit one value per axis instead
    of ``offset_bins`` logits.
    """

    def __init__(self, cfg=None, field_mode="classification"):
        super().__init__()
        cfg = cfg or ModelConfig()
        cfg.validate()
        if field_mode not in ("classification", "regression"):
            raise ConfigError(f"unknown field mode {field_mode!r}")
        self.cfg = cfg
        self.field_mode = field_mode
        c = cfg.tstl_channels
        self.encoder = Encoder(cfg)
        if cfg.aux_heads:
            per_axis = cfg.offset_bins if field_mode == "classification" else 1
            self.seg_tstl = TSTL(cfg.c_sh, c)
            self.seg_head = FCNHead(c, cfg.seg_classes)
            self.st_tstl = TSTL(cfg.c_sh, c)
            self.st_head = FCNHead(c, 2 * per_axis)
            self.bt_tstl = TSTL(cfg.c_cat, c)
            self.bt_head = FCNHead(c, 2 * per_axis)
        self.mtfgm = MTFGM(c, cfg.c_k, cfg.c_att) if cfg.use_mtfgm else None
        self.cd_tstl = TSTL(cfg.c_cat, c)
        self.coarse_head = FCNHead(c, 2) if cfg.coarse_change else None
        self.fcd_tstl = TSTL(cfg.c_att + c, c)
        self.change_head = FCNHead(c, 2)

    def check_input(self, x):
        s = self.cfg.stride
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels or x.shape[-1] % s or x.shape[-2] % s:
            raise ConfigError(f"expected (B, {self.cfg.in_channels}, H, W) with H, W divisible by {s}, got {tuple(x.shape)}")

    def encode(self, image):
        self.check_input(image)
        return self.encoder(image)

    def _up(self, x, size):
        return F.interpolate(x, size=size, mode="bilinear", align_corners=False)

    def _split_axes(self, logits, size):
        logits = self._up(logits, size)
        k = logits.shape[1] // 2
        return logits[:, :k], logits[:, k:]

    def forward(self, img_t1, img_t2, gates=None, zero_guidance=False):
        if img_t1.shape != img_t2.shape:
            raise ConfigError(f"image shapes differ: {tuple(img_t1.shape)} vs {tuple(img_t2.shape)}")
        size = img_t1.shape[-2:]
        f1, f2 = self.encode(img_t1), self.encode(img_t2)
        f_cat = torch.cat([f1, f2], dim=1)
        out = {}
        if self.cfg.aux_heads:
            f_seg = [self.seg_tstl(f) for f in (f1, f2)]
            f_st = [self.st_tstl(f) for f in (f1, f2)]
            f_bt = self.bt_tstl(f_cat)
            out["seg_t1"], out["seg_t2"] = (self._up(self.seg_head(f), size) for f in f_seg)
            out["st_t1_x"], out["st_t1_y"] = self._split_axes(self.st_head(f_st[0]), size)
            out["st_t2_x"], out["st_t2_y"] = self._split_axes(self.st_head(f_st[1]), size)
            out["bt_x"], out["bt_y"] = self._split_axes(self.bt_head(f_bt), size)
        f_cd = self.cd_tstl(f_cat)
        if self.mtfgm is not None:
            task = f_seg + f_st + [f_bt]
            if zero_guidance:
                task = [torch.zeros_like(t) for t in task]
            f_att = self.mtfgm(*task, gates=gates)
        else:
            f_att = f_cd.new_zeros((f_cd.shape[0], self.cfg.c_att) + f_cd.shape[-2:])
        if self.coarse_head is not None:
            out["change_coarse"] = self._up(self.coarse_head(f_cd), size)
        x = self.fcd_tstl(torch.cat([f_att, f_cd], dim=1))
        if self.cfg.decoder_upsample > 1:
            x = F.interpolate(x, scale_factor=self.cfg.decoder_upsample, mode="bilinear", align_corners=False)
        out["change"] = self._up(self.change_head(x), size)
        return Outputs(**out)
