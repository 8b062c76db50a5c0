"""Checkpoints: a JSON manifest plus one raw little-endian float32 blob per tensor."""
import json
import shutil
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError
from ..model import MTGCDNet
from .config import config_from_dict, config_to_dict

FORMAT = "mtgcd-checkpoint/1"


def save_checkpoint(directory, model, cfg, iteration, metrics=None):
    d = Path(directory)
    tmp = d.with_name(d.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    (tmp / "tensors").mkdir(parents=True)
    index = {}
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        fname = f"{name}.f32"
        np.ascontiguousarray(arr, dtype="<f4").tofile(tmp / "tensors" / fname)
        index[name] = {"file": f"tensors/{fname}", "shape": list(arr.shape), "dtype": str(arr.dtype)}
    manifest = {"format": FORMAT, "config": config_to_dict(cfg), "iteration": int(iteration),
                "metrics": metrics or {}, "tensors": index}
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
    if d.exists():
        shutil.rmtree(d)
    tmp.rename(d)
    return d


def read_manifest(directory):
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read checkpoint manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise ConfigError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    return manifest


def load_checkpoint(directory):
    """Rebuild the model described by a checkpoint; returns (model, cfg, manifest)."""
    d = Path(directory)
    manifest = read_manifest(d)
    cfg = config_from_dict(manifest["config"])
    model = MTGCDNet(cfg.model, cfg.loss.field_mode)
    expected = model.state_dict()
    stored = manifest["tensors"]
    if set(stored) != set(expected):
        missing, extra = sorted(set(expected) - set(stored)), sorted(set(stored) - set(expected))
        raise ConfigError(f"checkpoint does not match its config: missing {missing[:5]}, unexpected {extra[:5]}")
    state = {}
    for name, ref in expected.items():
        info = stored[name]
        if list(ref.shape) != info["shape"]:
            raise ConfigError(f"tensor {name}: shape {info['shape']} != model {list(ref.shape)}")
        arr = np.fromfile(d / info["file"], dtype="<f4").reshape(info["shape"])
        state[name] = torch.from_numpy(arr.astype(np.dtype(info["dtype"])))
    model.load_state_dict(state)
    model.eval()
    return model, cfg, manifest
