"""Training loop: momentum SGD with poly decay, periodic validation, best-IoU checkpoint."""
import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import DegenerateBatch, NumericalError
from ..losses import total_loss
from ..metrics import ConfusionCounts, accumulate, summarize
from ..model import MTGCDNet
from .augment import augment
from .checkpoint import save_checkpoint
from .config import save_config
from .data import batches, collate, load_split, to_example
from .schedule import poly_lr, set_lr

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("total", "cd", "cd_ce", "cd_dice", "cd_coarse", "seg", "st", "bt")


@dataclass
class TrainResult:
    output_dir: Path
    best_checkpoint: Path
    last_checkpoint: Path
    best_iou: float
    best_iteration: int


def seed_everything(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def build_model(cfg):
    return MTGCDNet(cfg.model, cfg.loss.field_mode)


@torch.no_grad()
def predict_change(model, batch):
    model.eval()
    out = model(batch["image_t1"], batch["image_t2"])
    return out.change.argmax(dim=1)


@torch.no_grad()
def score(model, pairs, cfg, batch_size=None):
    """Confusion counts of the fine change mask over a list of pairs."""
    was_training = model.training
    counts = ConfusionCounts()
    for batch in batches(pairs, cfg.bins, cfg.data.facade_mode, batch_size or cfg.batch_size):
        pred = predict_change(model, batch)
        counts = counts + accumulate(pred, batch["change"], batch["change_ignore"])
    model.train(was_training)
    return counts


class _BatchStream:
    """Deterministic reshuffled-epoch index stream."""

    def __init__(self, n, rng):
        self.n, self.rng, self.queue = n, rng, []

    def take(self, k):
        out = []
        while len(out) < k:
            if not self.queue:
                self.queue = list(self.rng.permutation(self.n))
            out.append(self.queue.pop())
        return out


def train(cfg, train_pairs=None, val_pairs=None, progress=None):
    """Train per ``cfg`` and return where the checkpoints went.

    Pairs are loaded (or generated from seeds) when not supplied.
    ``progress``, if given, is called as ``progress(iteration, loss_terms)``
    at every logging interval.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    rng = seed_everything(cfg.seed)
    model = build_model(cfg)
    train_pairs = train_pairs if train_pairs is not None else load_split(cfg.data, "train")
    val_pairs = val_pairs if val_pairs is not None else load_split(cfg.data, "val")
    optimizer = torch.optim.SGD(model.parameters(), lr=cfg.optim.lr0, momentum=cfg.optim.momentum,
                                weight_decay=cfg.optim.weight_decay)
    stream = _BatchStream(len(train_pairs), rng)
    best = (-1.0, 0)
    max_iters = cfg.schedule.max_iters

    with open(out / "train_log.csv", "w", newline="") as flog, open(out / "val_log.csv", "w", newline="") as fval:
        loss_log = csv.writer(flog)
        loss_log.writerow(("iteration", "lr") + LOSS_COLUMNS)
        val_log = csv.writer(fval)
        val_log.writerow(("iteration", "iou", "f1", "recall", "precision"))

        def validate(iteration):
            nonlocal best
            m = summarize(score(model, val_pairs, cfg))
            val_log.writerow((iteration, f"{m['iou']:.6f}", f"{m['f1']:.6f}", f"{m['recall']:.6f}", f"{m['precision']:.6f}"))
            fval.flush()
            if m["iou"] > best[0]:
                best = (m["iou"], iteration)
                save_checkpoint(out / "best", model, cfg, iteration, m)
            return m

        model.train()
        for it in range(max_iters):
            lr = poly_lr(it, cfg.optim.lr0, max_iters, cfg.schedule.poly_power)
            set_lr(optimizer, lr)
            idx = stream.take(cfg.batch_size)
            batch = collate([to_example(augment(train_pairs[i], rng, cfg.augment, cfg.crop_size), cfg.bins,
                                        cfg.data.facade_mode) for i in idx])
            outputs = model(batch["image_t1"], batch["image_t2"])
            try:
                with warnings.catch_warnings():
                    # small crops routinely contain no unchanged roof
                    warnings.simplefilter("ignore", DegenerateBatch)
                    loss, terms = total_loss(outputs, batch, cfg.loss)
            except NumericalError:
                # parameters are still those that produced the previous finite step
                save_checkpoint(out / "last_good", model, cfg, it, {})
                log.error("non-finite loss at iteration %d; last good weights in %s", it, out / "last_good")
                raise
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            step = it + 1
            if step % cfg.log_interval == 0 or step == max_iters:
                loss_log.writerow([step, f"{lr:.8g}"] + [f"{terms[c]:.6f}" if c in terms else "" for c in LOSS_COLUMNS])
                flog.flush()
                if progress:
                    progress(step, terms)
            if step % cfg.eval_interval == 0 or step == max_iters:
                validate(step)
                model.train()

    save_checkpoint(out / "last", model, cfg, max_iters, summarize(score(model, val_pairs, cfg)))
    return TrainResult(out, out / "best", out / "last", best[0], best[1])
