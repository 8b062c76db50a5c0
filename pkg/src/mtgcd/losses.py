"""Composite multi-task objective with ignore-region masking."""
import logging
import warnings
from dataclasses import dataclass
from typing import Literal

import torch
import torch.nn.functional as F

from .errors import ConfigError, NumericalError, DegenerateBatch

log = logging.getLogger(__name__)

DICE_SMOOTH = 1.0


@dataclass
class LossConfig:
    lambda1: float = 1.0  # segmentation
    lambda2: float = 1.0  # ST-offsets
    lambda3: float = 1.0  # BT-flows
    change_ce_weight: float = 1.0
    change_dice_weight: float = 1.0
    coarse_weight: float = 0.0
    field_mode: Literal["classification", "regression"] = "classification"

    def validate(self):
        for name in ("lambda1", "lambda2", "lambda3", "change_ce_weight", "change_dice_weight", "coarse_weight"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.field_mode not in ("classification", "regression"):
            raise ConfigError(f"unknown field mode {self.field_mode!r}")


def _valid(target, ignore):
    valid = torch.ones_like(target, dtype=torch.bool) if ignore is None else ~ignore.bool()
    return valid


def _degenerate(name, like):
    warnings.warn(f"{name}: every pixel ignored, loss set to zero", DegenerateBatch, stacklevel=3)
    log.debug("degenerate batch in %s", name)
    return like.sum() * 0.0


def ce_loss(logits, target, ignore=None):
    """Mean pixel NLL over non-ignored pixels. logits (B, K, H, W), target (B, H, W)."""
    valid = _valid(target, ignore)
    if not valid.any():
        return _degenerate("ce_loss", logits)
    safe = torch.where(valid, target.long(), torch.zeros_like(target, dtype=torch.long))
    nll = F.cross_entropy(logits, safe, reduction="none")
    return nll[valid].mean()


def dice_loss(logits, target, ignore=None, smooth=DICE_SMOOTH):
    """Foreground dice on softmax probabilities of class 1 over non-ignored pixels."""
    valid = _valid(target, ignore)
    if not valid.any():
        return _degenerate("dice_loss", logits)
    p = F.softmax(logits, dim=1)[:, 1][valid]
    g = (target[valid] == 1).to(p.dtype)
    return 1.0 - (2.0 * (p * g).sum() + smooth) / (p.sum() + g.sum() + smooth)


def epe_loss(pred, target, mask=None):
    """Mean end-point error over masked pixels; fields are (B, 2, H, W)."""
    valid = torch.ones(pred.shape[:1] + pred.shape[2:], dtype=torch.bool, device=pred.device) if mask is None else mask.bool()
    if not valid.any():
        return _degenerate("epe_loss", pred)
    diff = (pred - target).permute(0, 2, 3, 1)[valid]
    return torch.linalg.vector_norm(diff, dim=-1).mean()


def change_loss(logits, target, ignore, cfg):
    return cfg.change_ce_weight * ce_loss(logits, target, ignore) + cfg.change_dice_weight * dice_loss(logits, target, ignore)


def _mean(terms):
    return torch.stack(terms).mean()


def total_loss(outputs, labels, cfg=LossConfig()):
    """Change loss plus lambda-weighted auxiliary losses.

    ``labels`` is a dict of batched tensors (see ``harness.data.collate``).
    Returns the total and a dict of detached per-term values. Auxiliary terms
    with zero weight, or whose outputs are absent, are skipped.
    """
    terms = {}
    terms["cd_ce"] = ce_loss(outputs.change, labels["change"], labels.get("change_ignore"))
    terms["cd_dice"] = dice_loss(outputs.change, labels["change"], labels.get("change_ignore"))
    terms["cd"] = cfg.change_ce_weight * terms["cd_ce"] + cfg.change_dice_weight * terms["cd_dice"]
    total = terms["cd"]
    if cfg.coarse_weight > 0 and outputs.change_coarse is not None:
        terms["cd_coarse"] = change_loss(outputs.change_coarse, labels["change"], labels.get("change_ignore"), cfg)
        total = total + cfg.coarse_weight * terms["cd_coarse"]

    if cfg.lambda1 > 0 and outputs.seg_t1 is not None:
        terms["seg"] = _mean([ce_loss(outputs.seg_t1, labels["seg_t1"], labels["seg_ignore_t1"]),
                              ce_loss(outputs.seg_t2, labels["seg_t2"], labels["seg_ignore_t2"])])
        total = total + cfg.lambda1 * terms["seg"]
    if cfg.lambda2 > 0 and outputs.st_t1_x is not None:
        parts = []
        for t in ("t1", "t2"):
            ox, oy = getattr(outputs, f"st_{t}_x"), getattr(outputs, f"st_{t}_y")
            ignore = ~labels[f"st_mask_{t}"]
            if cfg.field_mode == "classification":
                parts += [ce_loss(ox, labels[f"st_cls_{t}"][:, 0], ignore), ce_loss(oy, labels[f"st_cls_{t}"][:, 1], ignore)]
            else:
                parts.append(epe_loss(torch.cat([ox, oy], dim=1), labels[f"st_{t}"], labels[f"st_mask_{t}"]))
        terms["st"] = _mean(parts)
        total = total + cfg.lambda2 * terms["st"]
    if cfg.lambda3 > 0 and outputs.bt_x is not None:
        ignore = ~labels["bt_mask"]
        if cfg.field_mode == "classification":
            terms["bt"] = _mean([ce_loss(outputs.bt_x, labels["bt_cls"][:, 0], ignore),
                                 ce_loss(outputs.bt_y, labels["bt_cls"][:, 1], ignore)])
        else:
            terms["bt"] = epe_loss(torch.cat([outputs.bt_x, outputs.bt_y], dim=1), labels["bt"], labels["bt_mask"])
        total = total + cfg.lambda3 * terms["bt"]

    for name, value in terms.items():
        if not torch.isfinite(value).all():
            raise NumericalError(f"loss term {name!r} is not finite ({value.item()})")
    terms["total"] = total
    return total, {k: float(v.detach()) for k, v in terms.items()}
