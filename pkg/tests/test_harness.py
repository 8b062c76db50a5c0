import dataclasses
import json
import math

import numpy as np
import pytest
from PIL import Image

from conftest import tiny_config
from mtgcd import cli
from mtgcd.errors import ConfigError
from mtgcd.harness.augment import augment, crop, hflip, rot90, vflip
from mtgcd.harness.checkpoint import load_checkpoint, save_checkpoint
from mtgcd.harness.config import (AugmentConfig, ExperimentConfig, apply_seed_env, config_from_dict, config_to_dict,
                                  load_config, full_recipe, save_config, with_overrides)
from mtgcd.harness.data import generate_pair, load_split, write_dataset
from mtgcd.harness.evaluate import evaluate, predict
from mtgcd.harness.schedule import poly_lr
from mtgcd.harness.train import build_model, score, train
from mtgcd.labelgen import check_sample
from mtgcd.metrics import summarize
from mtgcd.scenegen import SceneParams, make_pair, random_scene, save_pair


@pytest.fixture(scope="module")
def sample():
    return make_pair(random_scene(np.random.default_rng(5)))


# schedule

def test_poly_lr_endpoints_and_midpoint():
    assert poly_lr(0, 0.01, 1000) == 0.01
    assert poly_lr(1000, 0.01, 1000) == 0.0
    assert poly_lr(500, 0.01, 1000) == pytest.approx(0.01 * 0.5 ** 0.9, rel=1e-12)


def test_poly_lr_rejects_out_of_range():
    with pytest.raises(ValueError):
        poly_lr(1001, 0.01, 1000)
    with pytest.raises(ValueError):
        poly_lr(-1, 0.01, 1000)


def test_poly_lr_is_monotone():
    lrs = [poly_lr(i, 0.01, 200) for i in range(201)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))


# augmentation

def _same(a, b):
    for k in ("image_t1", "image_t2", "seg_t1", "seg_t2", "change_mask", "ignore_mask", "bt_valid"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    for k in ("st_t1", "st_t2", "bt_flow"):
        np.testing.assert_array_equal(getattr(a, k).vx, getattr(b, k).vx)
        np.testing.assert_array_equal(getattr(a, k).vy, getattr(b, k).vy)


def test_identity_config_leaves_sample_unchanged(sample):
    _same(augment(sample, np.random.default_rng(0), AugmentConfig.none()), sample)


def test_involutions(sample):
    _same(hflip(hflip(sample)), sample)
    _same(vflip(vflip(sample)), sample)
    _same(rot90(sample, 4), sample)
    _same(rot90(hflip(rot90(hflip(sample)))), sample)


def test_hflip_negates_x(sample):
    f = hflip(sample)
    np.testing.assert_array_equal(f.st_t1.vx, -sample.st_t1.vx[:, ::-1])
    np.testing.assert_array_equal(f.st_t1.vy, sample.st_t1.vy[:, ::-1])


@pytest.mark.parametrize("seed", range(6))
def test_labels_stay_coherent_after_random_transforms(seed):
    s = make_pair(random_scene(np.random.default_rng([7, seed])))
    rng = np.random.default_rng(seed)
    out = augment(s, rng, AugmentConfig(color_jitter=False), crop_size=96)
    assert out.shape == (96, 96)
    # cropping can cut buildings; check the full-frame transforms with the checker
    full = rot90(vflip(hflip(s)), seed % 4)
    assert check_sample(full) == []


def test_crop_too_large(sample):
    with pytest.raises(ConfigError):
        crop(sample, 0, 0, 1000)
    with pytest.raises(ConfigError):
        augment(sample, np.random.default_rng(0), AugmentConfig.none(), crop_size=256)


# config

def test_config_round_trip(tmp_path):
    cfg = full_recipe()
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_config_rejects_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        with_overrides(ExperimentConfig(), {"optim.lr0": -1.0})
    with pytest.raises(ConfigError):
        with_overrides(ExperimentConfig(), {"crop_size": 100})
    with pytest.raises(ConfigError):
        with_overrides(ExperimentConfig(), {"no.such.key": 1})
    with pytest.raises(ConfigError):
        with_overrides(ExperimentConfig(), {"data.facade_mode": "roof"})  # needs two classes
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_seed_environment_variable(monkeypatch):
    monkeypatch.setenv("MTGCD_SEED", "42")
    assert apply_seed_env(ExperimentConfig()).seed == 42
    monkeypatch.setenv("MTGCD_SEED", "x")
    with pytest.raises(ConfigError):
        apply_seed_env(ExperimentConfig())


# data

def test_generation_is_reproducible():
    p = SceneParams(image_size=(64, 64), n_buildings=(1, 3), side=(8.0, 16.0))
    a, b = generate_pair(3, 1, p), generate_pair(3, 1, p)
    _same(a, b)


def test_write_and_load_dataset(tmp_path):
    cfg = tiny_config(tmp_path / "run")
    counts = write_dataset(cfg.data, tmp_path / "data")
    assert counts == {"train": 4, "val": 4, "test_in": 4, "test_out": 4}
    from_disk = load_split(with_overrides(cfg, {"data.root": str(tmp_path / "data")}).data, "val")
    for a, b in zip(from_disk, load_split(cfg.data, "val")):
        # ignored t2 pixels carry no segmentation label on disk
        keep = ~b.ignore_mask
        np.testing.assert_array_equal(a.seg_t2[keep], b.seg_t2[keep])
        b = dataclasses.replace(b, seg_t2=a.seg_t2)
        _same(a, b)


# training, checkpoints, evaluation

@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config(out)
    return cfg, train(cfg)


def test_training_writes_logs_and_checkpoints(trained):
    cfg, result = trained
    assert (result.best_checkpoint / "manifest.json").exists()
    assert (result.last_checkpoint / "manifest.json").exists()
    lines = (result.output_dir / "train_log.csv").read_text().splitlines()
    assert len(lines) == 1 + cfg.schedule.max_iters
    val = (result.output_dir / "val_log.csv").read_text().splitlines()
    assert [l.split(",")[0] for l in val[1:]] == ["2", "4"]
    assert 0.0 <= result.best_iou <= 1.0


def test_checkpoint_reproduces_metrics(trained, tmp_path):
    cfg, result = trained
    model, cfg2, manifest = load_checkpoint(result.best_checkpoint)
    val = load_split(cfg.data, "val")
    m = summarize(score(model, val, cfg2))
    for k in ("iou", "f1", "recall", "precision"):
        assert m[k] == manifest["metrics"][k]
    save_checkpoint(tmp_path / "again", model, cfg2, manifest["iteration"], m)
    model3, _, _ = load_checkpoint(tmp_path / "again")
    assert summarize(score(model3, val, cfg2)) == m


def test_checkpoint_config_mismatch(trained, tmp_path):
    cfg, result = trained
    model, _, _ = load_checkpoint(result.best_checkpoint)
    other = with_overrides(cfg, {"model.c_att": 24})
    save_checkpoint(tmp_path / "bad", model, other, 0)
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "bad")


def test_missing_checkpoint():
    with pytest.raises(ConfigError):
        load_checkpoint("/nonexistent/ckpt")


def test_evaluate_writes_report(trained, tmp_path):
    _, result = trained
    rows, path = evaluate(result.best_checkpoint, "all", tmp_path / "r.csv")
    assert [r["split"] for r in rows] == ["test_in", "test_out"]
    text = path.read_text().splitlines()
    assert text[0].startswith("split,iou,f1") and len(text) == 3


def test_perfect_prediction_scores_one(tmp_path):
    from mtgcd.metrics import accumulate

    pairs = load_split(tiny_config(tmp_path).data, "test_in")
    counts = sum((accumulate(p.change_mask, p.change_mask) for p in pairs), start=accumulate(np.zeros(1), np.zeros(1)))
    s = summarize(counts)
    assert s["iou"] == 1.0 and s["f1"] == 1.0


def test_predict_outputs(trained, tmp_path):
    cfg, result = trained
    pair = load_split(cfg.data, "test_in")[0]
    save_pair(pair, tmp_path / "pair")
    files = predict(result.best_checkpoint, tmp_path / "pair", tmp_path / "pred")
    names = sorted(p.name for p in files)
    assert names == ["pred_bt.f32", "pred_change.png", "pred_seg_t1.png", "pred_seg_t2.png",
                     "pred_st_t1.f32", "pred_st_t2.f32"]
    change = np.array(Image.open(tmp_path / "pred" / "pred_change.png"))
    assert change.shape == (64, 64) and set(np.unique(change)) <= {0, 1}
    bt = np.fromfile(tmp_path / "pred" / "pred_bt.f32", dtype="<f4")
    assert bt.size == 64 * 64 * 2
    predict(result.best_checkpoint, tmp_path / "pair", tmp_path / "pred2")
    for f in names:
        assert (tmp_path / "pred" / f).read_bytes() == (tmp_path / "pred2" / f).read_bytes()


def test_training_is_deterministic(tmp_path):
    a = train(tiny_config(tmp_path / "a"))
    b = train(tiny_config(tmp_path / "b"))
    for name in ("train_log.csv", "val_log.csv"):
        assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes()


def test_baseline_trains(tmp_path):
    cfg = tiny_config(tmp_path, **{"model.aux_heads": False, "model.use_mtfgm": False, "loss.lambda1": 0.0,
                                   "loss.lambda2": 0.0, "loss.lambda3": 0.0, "schedule.max_iters": 2})
    r = train(cfg)
    header = (r.output_dir / "train_log.csv").read_text().splitlines()
    assert header[1].split(",")[-3:] == ["", "", ""]
    assert math.isfinite(float(header[1].split(",")[2]))


# command line

def test_cli_end_to_end(tmp_path, capsys):
    cfg = tiny_config(tmp_path / "run", **{"schedule.max_iters": 2})
    save_config(cfg, tmp_path / "cfg.json")
    assert cli.main(["datagen", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "data")]) == 0
    assert cli.main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    ckpt = tmp_path / "run" / "best"
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--split", "test_out",
                     "--data-root", str(tmp_path / "data")]) == 0
    assert cli.main(["predict", "--checkpoint", str(ckpt), "--pair", str(tmp_path / "data" / "test_in" / "00000"),
                     "--out", str(tmp_path / "pred"), "--change-only"]) == 0
    assert (tmp_path / "pred" / "pred_change.png").exists()
    assert not (tmp_path / "pred" / "pred_bt.f32").exists()
    assert cli.main(["init-config", "--out", str(tmp_path / "desk.json")]) == 0
    assert load_config(tmp_path / "desk.json").crop_size == 64
    out = capsys.readouterr().out
    assert "test_out" in out


def test_cli_ablate_small_grid(tmp_path):
    cfg = tiny_config(tmp_path / "run", **{"schedule.max_iters": 2})
    save_config(cfg, tmp_path / "cfg.json")
    grid = {"seeds": [0, 1], "splits": ["test_in"], "variants": [
        {"name": "baseline", "overrides": {"model.aux_heads": False, "model.use_mtfgm": False,
                                           "loss.lambda1": 0.0, "loss.lambda2": 0.0, "loss.lambda3": 0.0}},
        {"name": "mtgcd", "overrides": {}}]}
    (tmp_path / "grid.json").write_text(json.dumps(grid))
    assert cli.main(["ablate", "--config", str(tmp_path / "cfg.json"), "--grid", str(tmp_path / "grid.json"),
                     "--out", str(tmp_path / "abl")]) == 0
    rows = (tmp_path / "abl" / "ablation.csv").read_text().splitlines()
    assert len(rows) == 1 + 2 * 2 + 2
    assert sum(",mean," in r for r in rows) == 2


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_untrained_model_scores_near_the_foreground_prior(tmp_path):
    import torch

    cfg = tiny_config(tmp_path, **{"data.test_in.count": 8})
    torch.manual_seed(0)
    m = summarize(score(build_model(cfg), load_split(cfg.data, "test_in"), cfg))
    assert m["iou"] < 0.3
