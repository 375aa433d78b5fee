"""Guidance stage: motion-aware attention, heads, baselines, fine-tuning."""

from .attention import PairwiseAttention, ordered_sum, pairwise_attend
from .finetune import (
    augment_images,
    build_model,
    finetune,
    layerwise_param_groups,
    load_guidance_checkpoint,
)
from .model import (
    AGGREGATORS,
    GruAggregator,
    PlaneHeads,
    SequenceGuidance,
    SingleFrameGuidance,
    dump_attention,
    extract_features,
    guidance_loss,
    predict_movements,
)

__all__ = [
    "AGGREGATORS",
    "GruAggregator",
    "PairwiseAttention",
    "PlaneHeads",
    "SequenceGuidance",
    "SingleFrameGuidance",
    "augment_images",
    "build_model",
    "dump_attention",
    "extract_features",
    "finetune",
    "guidance_loss",
    "layerwise_param_groups",
    "load_guidance_checkpoint",
    "ordered_sum",
    "pairwise_attend",
    "predict_movements",
]
