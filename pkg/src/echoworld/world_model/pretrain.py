"""World-model pre-training: joint spatial + motion objectives.

Each step masks a batch of context frames, regresses target-encoder
features at the masked cells, and (for the motion task) predicts the
pooled target-frame representation from a motion-conditioned slot, scored
contrastively. The target encoder and target projector are never
optimized; they only follow their online twins through an EMA whose decay
rises from 0.996 to 1.0 on a cosine schedule.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..config import ConfigError, ExperimentConfig, config_hash
from ..pose_algebra import relative
from ..scan_store import Scan, decimate
from . import checkpoint as ckpt
from .losses import Projector, info_nce, spatial_loss
from .masking import MaskSpec, block_mask
from .motion import MotionEncoder
from .predictor import Predictor
from .vit import VisionEncoder

__all__ = [
    "NumericalError",
    "PretrainState",
    "ema_decay_at",
    "ema_update",
    "lr_at",
    "build_state",
    "encode_context",
    "encode_target",
    "joint_step",
    "pretrain",
    "load_pretrain_checkpoint",
    "PRETRAIN_LOG_HEADER",
]

PRETRAIN_LOG_HEADER = "step,l_spatial,l_motion,l_total,lr,ema_decay"

CHECKPOINT_KIND = "pretrain"


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class PretrainState:
    cfg: ExperimentConfig
    context_encoder: VisionEncoder
    target_encoder: VisionEncoder
    predictor: Predictor
    motion_encoder: MotionEncoder
    projector: Projector
    projector_ema: Projector
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    total_steps: int = 0

    def named_trainable(self) -> dict[str, torch.nn.Parameter]:
        named = {}
        for prefix, module in (
            ("context_encoder", self.context_encoder),
            ("predictor", self.predictor),
            ("motion_encoder", self.motion_encoder),
            ("projector", self.projector),
        ):
            for name, p in module.named_parameters():
                named[f"{prefix}.{name}"] = p
        return named


def ema_decay_at(step: int, total_steps: int, start: float = 0.996) -> float:
    """Cosine decay schedule: d(0)=start, d(total)=1.0, monotone."""
    if total_steps <= 0:
        return start
    frac = min(max(step / total_steps, 0.0), 1.0)
    return 1.0 - (1.0 - start) * (1.0 + math.cos(math.pi * frac)) / 2.0


@torch.no_grad()
def ema_update(online: torch.nn.Module, target: torch.nn.Module, decay: float) -> None:
    for p_online, p_target in zip(online.parameters(), target.parameters()):
        p_target.mul_(decay).add_((1.0 - decay) * p_online)


def lr_at(step: int, total_steps: int, base: float, warmup_steps: int) -> float:
    """Linear warmup from zero, then cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return base * 0.5 * (1.0 + math.cos(math.pi * progress))


def _param_groups(modules: list[torch.nn.Module], weight_decay: float) -> list[dict]:
    decay, no_decay = [], []
    for module in modules:
        for name, p in module.named_parameters():
            if not p.requires_grad:
                continue
            (no_decay if p.ndim <= 1 else decay).append(p)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


def build_state(cfg: ExperimentConfig, seed: int, total_steps: int = 0) -> PretrainState:
    torch.manual_seed(seed)
    context = VisionEncoder(cfg.encoder)
    target = copy.deepcopy(context)
    target.requires_grad_(False)
    predictor = Predictor(cfg.encoder)
    motion = MotionEncoder(cfg.encoder.embed_dim, cfg.encoder.motion_hidden)
    projector = Projector(cfg.encoder.embed_dim)
    projector_ema = copy.deepcopy(projector)
    projector_ema.requires_grad_(False)
    pc = cfg.pretrain
    optimizer = torch.optim.AdamW(
        _param_groups([context, predictor, motion, projector], pc.weight_decay),
        lr=pc.lr,
        betas=(pc.beta1, pc.beta2),
        weight_decay=pc.weight_decay,
    )
    return PretrainState(
        cfg=cfg,
        context_encoder=context,
        target_encoder=target,
        predictor=predictor,
        motion_encoder=motion,
        projector=projector,
        projector_ema=projector_ema,
        optimizer=optimizer,
        rng=np.random.default_rng(seed),
        total_steps=total_steps,
    )


def encode_context(
    encoder: VisionEncoder, images: torch.Tensor, mask: MaskSpec | None
) -> torch.Tensor:
    """Token features over the visible cells; masked patches are removed."""
    keep = None
    if mask is not None and mask.n_masked > 0:
        keep = torch.as_tensor(mask.visible, dtype=torch.long)
    return encoder(images, keep=keep)


@torch.no_grad()
def encode_target(encoder: VisionEncoder, images: torch.Tensor) -> torch.Tensor:
    """Full-grid token features, never tracked by autograd."""
    return encoder(images)


def joint_step(
    state: PretrainState,
    images_a: torch.Tensor,
    movements: torch.Tensor,
    images_b: torch.Tensor,
    mask: MaskSpec | None = None,
    apply_ema: bool = True,
) -> dict[str, float]:
    """One optimization step; returns the logged scalars."""
    pc = state.cfg.pretrain
    objective = pc.objective
    grid = state.context_encoder.grid
    if mask is None and objective != "motion":
        mask = block_mask(
            grid,
            grid,
            state.rng,
            n_blocks=pc.mask_blocks,
            scale=(pc.mask_scale_min, pc.mask_scale_max),
            aspect=(pc.mask_aspect_min, pc.mask_aspect_max),
            extra_drop=pc.mask_extra_drop,
        )

    h_x = encode_context(state.context_encoder, images_a, mask)

    zero = images_a.new_zeros(())
    l_spatial, l_motion = zero, zero
    if objective in ("joint", "spatial"):
        targets_a = encode_target(state.target_encoder, images_a)
        masked_idx = torch.as_tensor(mask.masked, dtype=torch.long)
        pred_sp = state.predictor.predict_spatial(h_x, mask)
        l_spatial = spatial_loss(pred_sp, targets_a[:, masked_idx, :])
    if objective in ("joint", "motion"):
        z = state.motion_encoder.encode_raw(movements)
        visible = mask.visible if mask is not None else tuple(range(grid * grid))
        pred_mo = state.predictor.predict_motion(h_x, visible, z)
        with torch.no_grad():
            pooled = encode_target(state.target_encoder, images_b).mean(dim=1)
            target_proj = state.projector_ema(pooled)
        l_motion = info_nce(
            state.projector(pred_mo), target_proj, pc.temperature, pc.symmetrize_infonce
        )

    if objective == "joint":
        total = l_spatial + pc.lambda_motion * l_motion
    elif objective == "spatial":
        total = l_spatial
    else:
        total = l_motion

    if not torch.isfinite(total):
        raise NumericalError(f"non-finite pre-training loss at step {state.step}")

    lr = lr_at(
        state.step,
        state.total_steps,
        pc.lr,
        warmup_steps=_warmup_steps(state),
    )
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()

    decay = ema_decay_at(state.step, state.total_steps, pc.ema_decay_start)
    if apply_ema:
        ema_update(state.context_encoder, state.target_encoder, decay)
        ema_update(state.projector, state.projector_ema, decay)
    state.step += 1
    return {
        "step": state.step - 1,
        "l_spatial": float(l_spatial.detach()),
        "l_motion": float(l_motion.detach()),
        "l_total": float(total.detach()),
        "lr": lr,
        "ema_decay": decay,
    }


def _warmup_steps(state: PretrainState) -> int:
    pc = state.cfg.pretrain
    if pc.epochs <= 0:
        return 0
    return int(round(state.total_steps * pc.warmup_epochs / pc.epochs))


def _epoch_batches(
    data: list[Scan], batch_size: int, rng: np.random.Generator
) -> list[list[tuple[int, int, int]]]:
    """Shuffled (scan, frame_a, frame_b) triples, chunked into full batches."""
    frames = [(si, fi) for si, scan in enumerate(data) for fi in range(scan.n_frames)]
    order = rng.permutation(len(frames))
    triples = []
    for idx in order:
        si, fi = frames[int(idx)]
        n = data[si].n_frames
        fj = int(rng.integers(n - 1))
        if fj >= fi:
            fj += 1
        triples.append((si, fi, fj))
    n_batches = len(triples) // batch_size
    return [
        triples[i * batch_size : (i + 1) * batch_size] for i in range(n_batches)
    ]


def _collate(data: list[Scan], batch: list[tuple[int, int, int]]):
    imgs_a, imgs_b, movements = [], [], []
    for si, fi, fj in batch:
        scan = data[si]
        imgs_a.append(scan.images[fi])
        imgs_b.append(scan.images[fj])
        movements.append(relative(scan.pose_at(fj), scan.pose_at(fi)).to_vector())
    to_tensor = lambda imgs: torch.from_numpy(
        np.stack(imgs).astype(np.float32) / 255.0
    ).unsqueeze(1)
    return (
        to_tensor(imgs_a),
        torch.from_numpy(np.stack(movements)).float(),
        to_tensor(imgs_b),
    )


def _state_arrays(state: PretrainState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    arrays.update(ckpt.module_arrays("context_encoder", state.context_encoder))
    arrays.update(ckpt.module_arrays("target_encoder", state.target_encoder))
    arrays.update(ckpt.module_arrays("predictor", state.predictor))
    arrays.update(ckpt.module_arrays("motion_encoder", state.motion_encoder))
    arrays.update(ckpt.module_arrays("projector", state.projector))
    arrays.update(ckpt.module_arrays("projector_ema", state.projector_ema))
    arrays.update(ckpt.optimizer_arrays("optim", state.optimizer, state.named_trainable()))
    return arrays


def save_pretrain_checkpoint(state: PretrainState, out_dir: str | Path) -> Path:
    meta = {
        "kind": CHECKPOINT_KIND,
        "step": state.step,
        "total_steps": state.total_steps,
        "objective": state.cfg.pretrain.objective,
        "rng": ckpt.capture_rng(state.rng),
    }
    return ckpt.save_checkpoint(Path(out_dir) / "checkpoint", _state_arrays(state), meta, state.cfg)


def load_pretrain_checkpoint(
    path: str | Path, expect_cfg: ExperimentConfig | None = None
) -> PretrainState:
    arrays, meta, cfg = ckpt.load_checkpoint(Path(path))
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a pre-training checkpoint")
    if expect_cfg is not None and config_hash(expect_cfg) != config_hash(cfg):
        raise ConfigError(
            "checkpoint config hash does not match the current configuration"
        )
    state = build_state(cfg, seed=0, total_steps=int(meta["total_steps"]))
    for prefix, module in (
        ("context_encoder", state.context_encoder),
        ("target_encoder", state.target_encoder),
        ("predictor", state.predictor),
        ("motion_encoder", state.motion_encoder),
        ("projector", state.projector),
        ("projector_ema", state.projector_ema),
    ):
        ckpt.load_module_arrays(module, prefix, arrays)
    ckpt.restore_optimizer("optim", state.optimizer, state.named_trainable(), arrays)
    ckpt.restore_rng(meta["rng"], state.rng)
    state.step = int(meta["step"])
    return state


def pretrain(
    scans: list[Scan],
    cfg: ExperimentConfig,
    out_dir: str | Path,
    seed: int | None = None,
    resume: bool = False,
    max_epochs: int | None = None,
) -> Path:
    """Run the configured pre-training objective over phantom scans.

    Writes ``checkpoint/`` and ``log.csv`` under ``out_dir``; resumable from
    its own checkpoint (the config hash must match). ``max_epochs`` bounds
    how many epochs this invocation runs before checkpointing and returning,
    to allow interrupted runs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pc = cfg.pretrain
    seed = cfg.seed if seed is None else seed
    data = [decimate(s, pc.data_fps) if pc.data_fps else s for s in scans]
    n_frames = sum(s.n_frames for s in data)
    steps_per_epoch = n_frames // pc.batch_size
    if steps_per_epoch < 1:
        raise ConfigError(
            f"dataset too small: {n_frames} frames < batch size {pc.batch_size}"
        )
    total_steps = steps_per_epoch * pc.epochs

    log_path = out / "log.csv"
    ckpt_path = out / "checkpoint"
    if resume and ckpt_path.exists():
        state = load_pretrain_checkpoint(ckpt_path, expect_cfg=cfg)
        state.total_steps = total_steps
        rows = [
            line
            for line in log_path.read_text().splitlines()[1:]
            if int(line.split(",")[0]) < state.step
        ]
    else:
        state = build_state(cfg, seed, total_steps)
        rows = []

    epochs_run = 0
    while state.step < total_steps and (max_epochs is None or epochs_run < max_epochs):
        epoch_rows = []
        for batch in _epoch_batches(data, pc.batch_size, state.rng):
            if state.step >= total_steps:
                break
            imgs_a, movements, imgs_b = _collate(data, batch)
            logged = joint_step(state, imgs_a, movements, imgs_b)
            epoch_rows.append(
                f"{logged['step']},{logged['l_spatial']:.6f},{logged['l_motion']:.6f},"
                f"{logged['l_total']:.6f},{logged['lr']:.8f},{logged['ema_decay']:.8f}"
            )
        rows.extend(epoch_rows)
        log_path.write_text(PRETRAIN_LOG_HEADER + "\n" + "\n".join(rows) + "\n")
        save_pretrain_checkpoint(state, out)
        epochs_run += 1
    return ckpt_path
