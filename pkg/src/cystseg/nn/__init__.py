"""From-scratch tensor autodiff and the residual patch classifier."""

from .tensor import Tensor, no_grad, conv2d, batchnorm2d, relu, linear, matmul, spatial_mean
from .layers import (Parameter, Module, Conv2d, BatchNorm2d, Linear,
                     ResidualBlock, PatchClassifier, BN_MOMENTUM, BN_EPS)
from .loss import softmax, softmax_xent
from .optim import Adam
from .checkpoint import save_checkpoint, load_checkpoint, MAGIC, FORMAT_VERSION

__all__ = [
    "Tensor", "no_grad", "conv2d", "batchnorm2d", "relu", "linear", "matmul",
    "spatial_mean", "Parameter", "Module", "Conv2d", "BatchNorm2d", "Linear",
    "ResidualBlock", "PatchClassifier", "BN_MOMENTUM", "BN_EPS", "softmax",
    "softmax_xent", "Adam", "save_checkpoint", "load_checkpoint", "MAGIC",
    "FORMAT_VERSION",
]
