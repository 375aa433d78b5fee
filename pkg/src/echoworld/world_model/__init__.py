"""JEPA-style pre-training: encoders, masking, predictor, objectives."""

from .losses import Projector, info_nce, spatial_loss
from .masking import MaskSpec, block_mask
from .motion import (
    NORM_CLIP,
    ROT_SCALE_DEG,
    TRANS_SCALE_MM,
    MotionEncoder,
    denormalize_movement,
    normalize_movement,
)
from .predictor import Predictor
from .pretrain import (
    NumericalError,
    PretrainState,
    build_state,
    ema_decay_at,
    ema_update,
    encode_context,
    encode_target,
    joint_step,
    load_pretrain_checkpoint,
    lr_at,
    pretrain,
)
from .vit import VisionEncoder, sincos_pos_embed_2d

__all__ = [
    "MaskSpec",
    "MotionEncoder",
    "NumericalError",
    "NORM_CLIP",
    "Predictor",
    "PretrainState",
    "Projector",
    "ROT_SCALE_DEG",
    "TRANS_SCALE_MM",
    "VisionEncoder",
    "block_mask",
    "build_state",
    "denormalize_movement",
    "ema_decay_at",
    "ema_update",
    "encode_context",
    "encode_target",
    "info_nce",
    "joint_step",
    "load_pretrain_checkpoint",
    "lr_at",
    "normalize_movement",
    "pretrain",
    "sincos_pos_embed_2d",
    "spatial_loss",
]
