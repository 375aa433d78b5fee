"""Checkpoint persistence shared by pre-training and fine-tuning.

A checkpoint is a directory holding a portable multi-array archive
(``arrays.npz``, one named float array per parameter / optimizer slot),
``meta.json`` (step, config hash, rng states, kind) and a verbatim copy of
the experiment config (``config.json``).
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

from ..config import ConfigError, ExperimentConfig, config_hash, load_config

__all__ = [
    "save_checkpoint",
    "load_checkpoint",
    "module_arrays",
    "load_module_arrays",
    "optimizer_arrays",
    "restore_optimizer",
    "capture_rng",
    "restore_rng",
]

ARRAYS_FILE = "arrays.npz"
META_FILE = "meta.json"
CONFIG_FILE = "config.json"


def module_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {
        f"{prefix}/{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def load_module_arrays(
    module: torch.nn.Module, prefix: str, arrays: dict[str, np.ndarray]
) -> None:
    state = {}
    skip = len(prefix) + 1
    for key, value in arrays.items():
        if key.startswith(prefix + "/"):
            state[key[skip:]] = torch.from_numpy(np.array(value))
    module.load_state_dict(state, strict=False)


def optimizer_arrays(
    prefix: str, optimizer: torch.optim.Optimizer, named: dict[str, torch.nn.Parameter]
) -> dict[str, np.ndarray]:
    by_param = {id(p): name for name, p in named.items()}
    out: dict[str, np.ndarray] = {}
    for group in optimizer.param_groups:
        for p in group["params"]:
            state = optimizer.state.get(p)
            if not state:
                continue
            name = by_param[id(p)]
            for slot, value in state.items():
                if isinstance(value, torch.Tensor):
                    out[f"{prefix}/{name}/{slot}"] = value.detach().cpu().numpy()
    return out


def restore_optimizer(
    prefix: str,
    optimizer: torch.optim.Optimizer,
    named: dict[str, torch.nn.Parameter],
    arrays: dict[str, np.ndarray],
) -> None:
    for name, p in named.items():
        slots = {}
        key_prefix = f"{prefix}/{name}/"
        for key, value in arrays.items():
            if key.startswith(key_prefix):
                slots[key[len(key_prefix) :]] = torch.from_numpy(np.array(value))
        if slots:
            optimizer.state[p] = slots


def capture_rng(np_rng: np.random.Generator) -> dict:
    return {
        "numpy": np_rng.bit_generator.state,
        "torch": base64.b64encode(torch.get_rng_state().numpy().tobytes()).decode(),
    }


def restore_rng(states: dict, np_rng: np.random.Generator) -> None:
    np_rng.bit_generator.state = states["numpy"]
    raw = base64.b64decode(states["torch"])
    torch.set_rng_state(torch.frombuffer(bytearray(raw), dtype=torch.uint8))


def save_checkpoint(
    path: str | Path,
    arrays: dict[str, np.ndarray],
    meta: dict,
    cfg: ExperimentConfig,
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / ARRAYS_FILE, **arrays)
    meta = dict(meta)
    meta["config_hash"] = config_hash(cfg)
    with open(path / META_FILE, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    with open(path / CONFIG_FILE, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict, ExperimentConfig]:
    path = Path(path)
    for required in (ARRAYS_FILE, META_FILE, CONFIG_FILE):
        if not (path / required).exists():
            raise ConfigError(f"checkpoint {path} is missing {required}")
    with np.load(path / ARRAYS_FILE) as npz:
        arrays = {k: npz[k] for k in npz.files}
    with open(path / META_FILE) as fh:
        meta = json.load(fh)
    cfg = load_config(path / CONFIG_FILE)
    if meta.get("config_hash") != config_hash(cfg):
        raise ConfigError(f"checkpoint {path}: config.json does not match stored hash")
    return arrays, meta, cfg
