"""Fine-tuning for probe guidance, single-frame and sequential protocols.

The visual encoder is fully fine-tuned with layer-wise learning-rate decay
(top block at the base rate, 0.65x per block toward the patch embedding),
drop path in the encoder blocks, and seeded brightness/contrast jitter on
the input frames. Losses are computed on normalized movements.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import torch

from ..config import ConfigError, ExperimentConfig, config_hash, section_hash
from ..pose_algebra import batch_guidance_targets
from ..scan_store import PLANE_IDS, Scan, build_sequence_input, decimate
from ..world_model import checkpoint as ckpt
from ..world_model.motion import normalize_movement
from ..world_model.pretrain import NumericalError, PretrainState, lr_at
from .model import SequenceGuidance, SingleFrameGuidance, guidance_loss

__all__ = [
    "finetune",
    "build_model",
    "load_guidance_checkpoint",
    "layerwise_param_groups",
    "augment_images",
    "FINETUNE_LOG_HEADER",
]

FINETUNE_LOG_HEADER = "step,loss,val_loss,lr"
CHECKPOINT_KIND = "finetune"


def layerwise_param_groups(
    model: torch.nn.Module,
    base_lr: float,
    layer_decay: float,
    weight_decay: float,
) -> list[dict]:
    """AdamW groups with per-depth lr scales for the encoder stack."""
    depth = len(model.encoder.blocks)

    def scale_of(name: str) -> float:
        if name.startswith("encoder.patch_embed"):
            return layer_decay**depth
        if name.startswith("encoder.blocks."):
            block = int(name.split(".")[2])
            return layer_decay ** (depth - 1 - block)
        return 1.0  # encoder final norm, heads, attention, motion encoder

    groups: dict[tuple[float, float], dict] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        scale = scale_of(name)
        wd = 0.0 if p.ndim <= 1 else weight_decay
        key = (scale, wd)
        if key not in groups:
            groups[key] = {
                "params": [],
                "lr": base_lr * scale,
                "lr_scale": scale,
                "weight_decay": wd,
            }
        groups[key]["params"].append(p)
    return list(groups.values())


def augment_images(
    images: torch.Tensor, rng: np.random.Generator, brightness: float, contrast: float
) -> torch.Tensor:
    """Per-image random brightness/contrast jitter, clipped back to [0, 1]."""
    if brightness <= 0 and contrast <= 0:
        return images
    lead = images.shape[: images.ndim - 3]
    n = int(np.prod(lead)) if lead else 1
    c = torch.from_numpy(rng.uniform(1 - contrast, 1 + contrast, n)).float()
    b = torch.from_numpy(rng.uniform(-brightness, brightness, n)).float()
    shape = lead + (1, 1, 1)
    c = c.reshape(shape)
    b = b.reshape(shape)
    return ((images - 0.5) * c + 0.5 + b).clamp(0.0, 1.0)


def _all_plane_targets(scan: Scan, frame_idx: int) -> np.ndarray:
    plane_vecs = np.stack(
        [scan.poses[scan.index_of(scan.annotations[p])] for p in PLANE_IDS]
    )
    return batch_guidance_targets(plane_vecs, scan.poses[frame_idx])


def _single_batch(scans, batch_size, rng):
    counts = np.array([s.n_frames for s in scans])
    probs = counts / counts.sum()
    images, targets = [], []
    for _ in range(batch_size):
        si = int(rng.choice(len(scans), p=probs))
        fi = int(rng.integers(scans[si].n_frames))
        images.append(scans[si].images[fi])
        targets.append(_all_plane_targets(scans[si], fi))
    images = torch.from_numpy(np.stack(images).astype(np.float32) / 255.0).unsqueeze(1)
    targets = torch.from_numpy(normalize_movement(np.stack(targets))).float()
    mask = torch.ones(batch_size, 10, dtype=torch.bool)
    return images, None, targets, mask


def _sequence_batch(scans, batch_size, rng, n_history, alpha):
    images, movements, targets, masks = [], [], [], []
    while len(images) < batch_size:
        si = int(rng.integers(len(scans)))
        scan = scans[si]
        t = int(scan.timesteps[int(rng.integers(scan.n_frames))])
        direction = "forward" if rng.integers(2) == 0 else "reverse"
        sample = build_sequence_input(scan, t, n_history, alpha, direction)
        if not sample.target_mask.any():
            continue  # all planes already visited in this direction
        images.append(sample.images.astype(np.float32) / 255.0)
        movements.append(sample.pairwise_motion)
        targets.append(sample.targets)
        masks.append(sample.target_mask)
    images = torch.from_numpy(np.stack(images)).unsqueeze(2)
    movements = torch.from_numpy(np.stack(movements)).float()
    targets = torch.from_numpy(normalize_movement(np.stack(targets))).float()
    mask = torch.from_numpy(np.stack(masks))
    return images, movements, targets, mask


def build_model(
    cfg: ExperimentConfig,
    protocol: str,
    aggregator: str = "motion_attention",
    init: PretrainState | None = None,
    seed: int = 0,
) -> torch.nn.Module:
    """Fresh guidance model, optionally warm-started from pre-training."""
    torch.manual_seed(seed)
    if protocol == "single":
        model = SingleFrameGuidance(cfg, drop_path=cfg.finetune.drop_path)
    elif protocol == "sequential":
        model = SequenceGuidance(
            cfg, aggregator=aggregator, drop_path=cfg.finetune.drop_path
        )
    else:
        raise ConfigError(f"protocol must be single|sequential, got {protocol!r}")
    if init is not None:
        if section_hash(init.cfg, "encoder") != section_hash(cfg, "encoder"):
            raise ConfigError(
                "pre-trained checkpoint encoder configuration does not match"
            )
        model.encoder.load_state_dict(init.context_encoder.state_dict())
        if isinstance(model, SequenceGuidance):
            model.motion_encoder.load_state_dict(init.motion_encoder.state_dict())
    return model


def _forward(model, images, movements):
    if isinstance(model, SingleFrameGuidance):
        return model(images)
    return model(images, movements)


def finetune(
    model: torch.nn.Module,
    train_scans: list[Scan],
    protocol: str,
    cfg: ExperimentConfig,
    out_dir: str | Path,
    seed: int | None = None,
) -> Path:
    """Train a guidance model; writes checkpoint/ and log.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fc = cfg.finetune
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed + 1)

    if len(train_scans) < 2:
        raise ConfigError("fine-tuning needs at least two scans (one held for validation)")
    n_val = max(1, len(train_scans) // 10)
    fit_scans = train_scans[:-n_val]
    val_scans = train_scans[-n_val:]

    if protocol == "sequential":
        seq_fps = cfg.protocol.sequential_fps
        fit_scans = [decimate(s, seq_fps) for s in fit_scans]
        val_scans = [decimate(s, seq_fps) for s in val_scans]
        batch_size = fc.batch_seq
        make_batch = lambda scans, r: _sequence_batch(
            scans, batch_size, r, cfg.protocol.history_len, cfg.protocol.alpha
        )
    else:
        batch_size = fc.batch_single
        make_batch = lambda scans, r: _single_batch(scans, batch_size, r)

    val_rng = np.random.default_rng(seed + 17)
    val_images, val_movements, val_targets, val_mask = make_batch(val_scans, val_rng)

    optimizer = torch.optim.AdamW(
        layerwise_param_groups(model, fc.lr, fc.layer_decay, fc.weight_decay),
        betas=(fc.beta1, fc.beta2),
    )

    def validate() -> float:
        model.eval()
        with torch.no_grad():
            pred = _forward(model, val_images, val_movements)
            loss = guidance_loss(pred, val_targets, val_mask)
        model.train()
        return float(loss)

    rows = []
    val_loss = validate()
    for step in range(fc.iterations):
        images, movements, targets, mask = make_batch(fit_scans, rng)
        images = augment_images(images, rng, fc.brightness, fc.contrast)
        pred = _forward(model, images, movements)
        loss = guidance_loss(pred, targets, mask)
        if not torch.isfinite(loss):
            raise NumericalError(f"non-finite guidance loss at step {step}")
        lr = lr_at(step, fc.iterations, fc.lr, fc.warmup_iters)
        for group in optimizer.param_groups:
            group["lr"] = lr * group["lr_scale"]
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        is_val_step = step == 0 or (step + 1) % fc.val_every == 0 or step == fc.iterations - 1
        if is_val_step and step > 0:
            val_loss = validate()
        rows.append(
            f"{step},{float(loss.detach()):.6f},{val_loss if is_val_step else ''},{lr:.8f}"
        )

    (out / "log.csv").write_text(FINETUNE_LOG_HEADER + "\n" + "\n".join(rows) + "\n")

    arrays = ckpt.module_arrays("model", model)
    meta = {
        "kind": CHECKPOINT_KIND,
        "protocol": protocol,
        "aggregator": getattr(model, "aggregator", None),
        "step": fc.iterations,
        "seed": seed,
        "final_val_loss": validate(),
    }
    return ckpt.save_checkpoint(out / "checkpoint", arrays, meta, cfg)


def load_guidance_checkpoint(path: str | Path) -> tuple[torch.nn.Module, dict, ExperimentConfig]:
    arrays, meta, cfg = ckpt.load_checkpoint(Path(path))
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a fine-tuned guidance checkpoint")
    protocol = meta["protocol"]
    if protocol == "single":
        model = SingleFrameGuidance(cfg)
    else:
        model = SequenceGuidance(cfg, aggregator=meta["aggregator"] or "motion_attention")
    ckpt.load_module_arrays(model, "model", arrays)
    model.eval()
    return model, meta, cfg
