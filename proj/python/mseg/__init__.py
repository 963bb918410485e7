"""Python access to the mseg core: model construction and inference,
losses and metrics, window kernels, tiling and clustering helpers."""

import json

from ._mseg import (
    IoError,
    Model,
    NumericError,
    ValidationError,
    class_weights,
    combined_loss,
    cosine_warmup_lr,
    early_stop,
    iou,
    kmeans,
    load_checkpoint,
    set_num_threads,
    tile_offsets,
    topk_accuracy,
    window_partition,
    window_reverse,
)

__all__ = [
    "IoError",
    "Model",
    "NumericError",
    "ValidationError",
    "build_model",
    "class_weights",
    "combined_loss",
    "cosine_warmup_lr",
    "early_stop",
    "iou",
    "kmeans",
    "load_checkpoint",
    "set_num_threads",
    "tile_offsets",
    "topk_accuracy",
    "window_partition",
    "window_reverse",
]


def build_model(seed=0, **config):
    """Model from keyword fields of the "model" config section,
    e.g. build_model(input_size=64, embed_dim=8, variant="classifier")."""
    return Model(json.dumps(config), seed)
