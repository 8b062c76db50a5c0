import numpy as np
import pytest

from mtgcd.scenegen import BuildingSpec, CameraSpec, SceneSpec, make_pair, random_scene


def rect(x0, y0, w, h):
    return ((x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h))


def one_building_scene(p1=True, p2=True, d1_cam=None, d2_cam=None, height=20.0, footprint=None, size=(128, 128)):
    b = BuildingSpec(1, footprint or rect(30, 30, 10, 10), height, p1, p2, roof_shade=200, facade_shade=100)
    return SceneSpec(size, (b,), d1_cam or CameraSpec(), d2_cam or CameraSpec(), background_noise_seed=7)


@pytest.fixture(scope="session")
def random_pairs():
    """100 random scenes and their pairs; shared by the geometric oracle tests."""
    out = []
    for seed in range(100):
        scene = random_scene(np.random.default_rng([99, seed]))
        out.append((scene, make_pair(scene)))
    return out


TINY_SCENE = {"image_size": [64, 64], "n_buildings": [1, 3], "side": [8.0, 16.0], "height": [4.0, 16.0]}


def tiny_config(out, **overrides):
    """A configuration small enough to train for a handful of iterations in tests."""
    from mtgcd.harness.config import ExperimentConfig, with_overrides

    base = {"name": "tiny", "batch_size": 2, "crop_size": 64, "schedule.max_iters": 4, "eval_interval": 2,
            "log_interval": 1, "output_dir": str(out), "model.encoder_width": 8, "model.c_sh": 16,
            "model.tstl_channels": 16, "model.c_k": 8, "model.c_att": 16}
    for i, split in enumerate(("train", "val", "test_in", "test_out")):
        base[f"data.{split}"] = {"count": 4, "seed": 10 + i, "scene": TINY_SCENE}
    base.update(overrides)
    return with_overrides(ExperimentConfig(), base)


ACCEPTANCE = []  # (criterion, passed, detail), filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
