"""From-scratch segmentation network: layers with analytic backward passes,
the attention U-Net model, BCE+Dice loss, Adam, and the training loop."""

from .layers import (
    AvgPool2d,
    ChannelAttention,
    Conv2d,
    ConvTranspose2d,
    InstanceNorm2d,
    Param,
    ReLU,
    SpatialAttention,
    sigmoid,
)
from .model import ModelConfig, UNet, load_checkpoint, save_checkpoint
from .train import (
    AdamState,
    LossConfig,
    TrainConfig,
    adam_step,
    seg_loss,
    train,
)

__all__ = [
    "AvgPool2d", "ChannelAttention", "Conv2d", "ConvTranspose2d",
    "InstanceNorm2d", "Param", "ReLU", "SpatialAttention", "sigmoid",
    "ModelConfig", "UNet", "load_checkpoint", "save_checkpoint",
    "AdamState", "LossConfig", "TrainConfig", "adam_step", "seg_loss", "train",
]
