"""Pre-training loop: stop-gradient discipline, checkpoints, resume."""

import hashlib

import numpy as np
import pytest
import torch

from conftest import mini_config, tiny_config

from echoworld.config import ConfigError
from echoworld.world_model import build_state, ema_update, joint_step
from echoworld.world_model.masking import block_mask
from echoworld.world_model.pretrain import (
    load_pretrain_checkpoint,
    pretrain,
    save_pretrain_checkpoint,
)


def _param_hash(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for _, p in sorted(module.state_dict().items()):
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def _run_steps(state, n, rng, batch=4):
    cfg = state.cfg
    size = cfg.encoder.image_size
    for _ in range(n):
        images_a = torch.rand(batch, 1, size, size)
        images_b = torch.rand(batch, 1, size, size)
        movements = torch.from_numpy(rng.uniform(-30, 30, (batch, 6))).float()
        joint_step(state, images_a, movements, images_b)


def test_stop_gradient_discipline(rng):
    """Target encoder and target projector move only through the EMA."""
    cfg = tiny_config()
    state = build_state(cfg, seed=0, total_steps=100)
    t_hash = _param_hash(state.target_encoder)
    p_hash = _param_hash(state.projector_ema)
    size = cfg.encoder.image_size
    images = torch.rand(4, 1, size, size)
    movements = torch.from_numpy(rng.uniform(-30, 30, (4, 6))).float()
    mask = block_mask(4, 4, np.random.default_rng(0))
    joint_step(state, images, movements, images, mask=mask, apply_ema=False)
    assert _param_hash(state.target_encoder) == t_hash
    assert _param_hash(state.projector_ema) == p_hash
    # online twins did move
    assert _param_hash(state.context_encoder) != _param_hash(state.target_encoder)
    ema_update(state.context_encoder, state.target_encoder, 0.5)
    assert _param_hash(state.target_encoder) != t_hash


def test_optimizer_covers_only_online_modules():
    state = build_state(tiny_config(), seed=0, total_steps=10)
    opt_params = {id(p) for g in state.optimizer.param_groups for p in g["params"]}
    for p in state.target_encoder.parameters():
        assert id(p) not in opt_params
    for p in state.projector_ema.parameters():
        assert id(p) not in opt_params
    for p in state.context_encoder.parameters():
        assert id(p) in opt_params


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = tiny_config()
    state = build_state(cfg, seed=3, total_steps=50)
    _run_steps(state, 3, rng)
    save_pretrain_checkpoint(state, tmp_path)
    loaded = load_pretrain_checkpoint(tmp_path / "checkpoint")
    assert loaded.step == state.step
    for mod in ("context_encoder", "target_encoder", "predictor", "motion_encoder"):
        assert _param_hash(getattr(loaded, mod)) == _param_hash(getattr(state, mod))


def test_checkpoint_rejects_wrong_config(tmp_path, rng):
    cfg = tiny_config()
    state = build_state(cfg, seed=3, total_steps=50)
    save_pretrain_checkpoint(state, tmp_path)
    other = tiny_config()
    other.pretrain.epochs += 1
    with pytest.raises(ConfigError):
        load_pretrain_checkpoint(tmp_path / "checkpoint", expect_cfg=other)


def test_pretrain_writes_log_and_checkpoint(tmp_path, mini_train):
    cfg = mini_config()
    path = pretrain(mini_train, cfg, tmp_path / "run", seed=5)
    assert path.exists()
    log = (tmp_path / "run" / "log.csv").read_text().splitlines()
    assert log[0] == "step,l_spatial,l_motion,l_total,lr,ema_decay"
    assert len(log) > 2
    first = log[1].split(",")
    assert float(first[4]) == 0.0  # warmup starts at zero lr


def test_pretrain_resume_bit_for_bit(tmp_path, mini_train):
    cfg = mini_config()
    cfg.pretrain.epochs = 3
    pretrain(mini_train, cfg, tmp_path / "full", seed=5)
    full_log = (tmp_path / "full" / "log.csv").read_text()

    pretrain(mini_train, cfg, tmp_path / "split", seed=5, max_epochs=2)
    pretrain(mini_train, cfg, tmp_path / "split", seed=5, resume=True)
    split_log = (tmp_path / "split" / "log.csv").read_text()
    assert split_log == full_log

    full_state = load_pretrain_checkpoint(tmp_path / "full" / "checkpoint")
    split_state = load_pretrain_checkpoint(tmp_path / "split" / "checkpoint")
    assert _param_hash(full_state.context_encoder) == _param_hash(split_state.context_encoder)


def test_pretrain_resume_refuses_config_mismatch(tmp_path, mini_train):
    cfg = mini_config()
    pretrain(mini_train, cfg, tmp_path / "run", seed=5, max_epochs=1)
    changed = mini_config()
    changed.pretrain.lr *= 2
    with pytest.raises(ConfigError):
        pretrain(mini_train, changed, tmp_path / "run", seed=5, resume=True)


def test_pretrain_objectives_log_zero_for_disabled_branch(tmp_path, mini_train):
    cfg = mini_config()
    cfg.pretrain.epochs = 1
    cfg.pretrain.objective = "spatial"
    pretrain(mini_train, cfg, tmp_path / "sp", seed=1)
    rows = (tmp_path / "sp" / "log.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)  # l_motion
    cfg2 = mini_config()
    cfg2.pretrain.epochs = 1
    cfg2.pretrain.objective = "motion"
    pretrain(mini_train, cfg2, tmp_path / "mo", seed=1)
    rows = (tmp_path / "mo" / "log.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[1]) == 0.0 for r in rows)  # l_spatial
