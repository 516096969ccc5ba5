"""Layers and the patch classifier.

The classifier keeps the 4-stage x 2-block basic residual layout but is
sized for 11x11 single-channel patches: 3x3 stride-1 stem (no max pool),
widths 16/32/64/128 with stride-2 transitions (spatial 11 -> 6 -> 3 -> 2),
global average pooling, and a 2-way head. Every residual block computes
relu(shortcut(x) + f(x)) with f = conv-bn-relu-conv-bn; the shortcut is a
1x1 projection conv + bn exactly when shape changes, identity otherwise.
"""

from __future__ import annotations

import numpy as np

from ..config import ModelConfig
from ..errors import ShapeError
from .tensor import Tensor, batchnorm2d, conv2d, linear, relu, spatial_mean

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


class Parameter(Tensor):
    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal container: parameter/buffer discovery and train/eval mode."""

    def __init__(self):
        self.training = True

    def _children(self) -> list[tuple[str, "Module"]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Module):
                out.append((name, value))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.append((f"{name}.{i}", item))
        return out

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Parameter]]:
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                out.append((prefix + name, value))
        for name, child in self._children():
            out.extend(child.named_parameters(prefix + name + "."))
        return out

    def named_buffers(self, prefix: str = "") -> list[tuple[str, np.ndarray]]:
        out = []
        for name in getattr(self, "_buffer_names", ()):
            out.append((prefix + name, getattr(self, name)))
        for name, child in self._children():
            out.extend(child.named_buffers(prefix + name + "."))
        return out

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
               dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = False, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(_he_normal(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm2d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, dtype=np.float32,
                 momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                           self.running_var, self.momentum, self.eps, self.training)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(_he_normal(
            rng, (out_features, in_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class ResidualBlock(Module):
    """y = relu(shortcut(x) + f(x)), f = conv-bn-relu-conv-bn."""

    def __init__(self, in_channels: int, out_channels: int, stride: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, stride=stride,
                            padding=1, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, stride=1,
                            padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        if stride != 1 or in_channels != out_channels:
            self.proj_conv = Conv2d(in_channels, out_channels, 1, rng,
                                    stride=stride, dtype=dtype)
            self.proj_bn = BatchNorm2d(out_channels, dtype=dtype)
        else:
            self.proj_conv = None
            self.proj_bn = None

    def forward(self, x: Tensor) -> Tensor:
        branch = self.bn1.forward(self.conv1.forward(x))
        branch = relu(branch)
        branch = self.bn2.forward(self.conv2.forward(branch))
        if self.proj_conv is not None:
            shortcut = self.proj_bn.forward(self.proj_conv.forward(x))
        else:
            shortcut = x
        return relu(shortcut + branch)


class PatchClassifier(Module):
    """Residual CNN mapping (N, 1, patch, patch) intensities to 2 logits."""

    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 dtype=np.float32):
        super().__init__()
        self.config = config or ModelConfig()
        self.seed = seed
        self.np_dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        widths = self.config.stage_channels
        self.stem_conv = Conv2d(1, self.config.stem_channels, 3, rng,
                                stride=1, padding=1, dtype=dtype)
        self.stem_bn = BatchNorm2d(self.config.stem_channels, dtype=dtype)
        blocks = []
        in_ch = self.config.stem_channels
        for stage, width in enumerate(widths):
            for block in range(self.config.blocks_per_stage):
                stride = 2 if stage > 0 and block == 0 else 1
                blocks.append(ResidualBlock(in_ch, width, stride, rng, dtype=dtype))
                in_ch = width
        self.blocks = blocks
        self.head = Linear(in_ch, self.config.num_classes, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != 1:
            raise ShapeError(f"expected (N, 1, H, W) input, got {x.data.shape}")
        h = relu(self.stem_bn.forward(self.stem_conv.forward(x)))
        for block in self.blocks:
            h = block.forward(h)
        return self.head.forward(spatial_mean(h))

    def logits(self, patches: np.ndarray) -> np.ndarray:
        """Forward a raw uint8/float patch batch (N, H, W) without a graph."""
        from .tensor import no_grad
        x = patches.astype(self.np_dtype) / self.np_dtype.type(255.0)
        x = x[:, None, :, :]
        with no_grad():
            return self.forward(Tensor(x)).data
