"""Numeric substrate: float64 tensors, gradients, Adam, clipping, GRU, checkpoints."""

from choreo.substrate.core import (
    DTYPE,
    ParamSet,
    adam_step,
    backward,
    check_finite,
    clip_grad_norm,
    global_norm,
    gru_step,
    initialize,
    make_generator,
    mlp,
    sample_one_hot,
    straight_through,
)
from choreo.substrate.checkpoint import (
    FORMAT_VERSION,
    CheckpointSchema,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "DTYPE",
    "ParamSet",
    "adam_step",
    "backward",
    "check_finite",
    "clip_grad_norm",
    "global_norm",
    "gru_step",
    "initialize",
    "make_generator",
    "mlp",
    "sample_one_hot",
    "straight_through",
    "FORMAT_VERSION",
    "CheckpointSchema",
    "load_checkpoint",
    "save_checkpoint",
]
