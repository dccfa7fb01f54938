"""Minimal differentiable-operator kernel on numpy.

Convolutions (2D/3D, plus transposed), batch norm, dense, pooling,
activations, losses, Adam, finite-difference gradient checking, and a binary
checkpoint format.  Parameters are float32 by default; pass dtype=float64
when building nets for gradient checks.
"""

from .layers import (
    Affine,
    BatchNorm,
    Conv,
    ConvTranspose,
    Dense,
    GlobalAvgPool,
    Layer,
    LeakyReLU,
    Parameter,
    ReLU,
    Sequential,
    Sigmoid,
    Tanh,
)
from .losses import bce_loss, compute_loss, gan_discriminator_loss, gan_generator_loss, l1_loss
from .optim import Adam, AdamState, adam_step, minibatch_indices
from .gradcheck import finite_difference_check, loss_gradient_check
from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .ops import conv_forward, conv_input_grad, conv_out_shape, conv_weight_grad

__all__ = [
    "Affine", "BatchNorm", "Conv", "ConvTranspose", "Dense", "GlobalAvgPool",
    "Layer", "LeakyReLU", "Parameter", "ReLU", "Sequential", "Sigmoid", "Tanh",
    "bce_loss", "compute_loss", "gan_discriminator_loss", "gan_generator_loss",
    "l1_loss", "Adam", "AdamState", "adam_step", "minibatch_indices",
    "finite_difference_check", "loss_gradient_check",
    "load_checkpoint", "load_into", "save_checkpoint",
    "conv_forward", "conv_input_grad", "conv_out_shape", "conv_weight_grad",
]
