"""Recurrent state-space world model."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    DOWNSAMPLE_STRIDE,
    LatentRollout,
    LatentState,
    RSSMWorldModel,
    WorldModelConfig,
    WorldModelParams,
    decode,
    decode_many,
    encode_init,
    encode_step,
    imagination_kl,
    imagine,
    imagine_batch,
    one_step_mse,
    reconstruction_mse,
    train_world_model,
)

__all__ = [
    "DOWNSAMPLE_STRIDE",
    "LatentRollout",
    "LatentState",
    "RSSMWorldModel",
    "WorldModelConfig",
    "WorldModelParams",
    "decode",
    "decode_many",
    "encode_init",
    "encode_step",
    "imagination_kl",
    "imagine",
    "imagine_batch",
    "load_checkpoint",
    "one_step_mse",
    "reconstruction_mse",
    "save_checkpoint",
    "train_world_model",
]
