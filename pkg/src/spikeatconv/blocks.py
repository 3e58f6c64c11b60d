"""Building blocks of the network: stem, spiking ConvNeXt, SpikeAtConv block,
downsampler and classification head.

Feature maps between blocks are ``[T, N, C, H, W]``; convolutions fold the
time axis into the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import attention, nn, spk
from . import tensor as tn
from .errors import ConfigError, GeometryError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class BlockParams:
    channels: int
    spk: spk.SpkBlockConfig
    attention: attention.AttentionConfig
    window: int
    grid: int
    expansion: int = 4
    spike_free: bool = False
    zero_init_residual: bool = True

    def __post_init__(self):
        if self.channels % 2:
            raise ConfigError(f"block channels must be even, got {self.channels}")
        if self.attention.channels != self.channels:
            raise ConfigError(
                f"heads*head_dim = {self.attention.channels} does not match channels {self.channels}")


class ConvNeXt(nn.Module):
    """depthwise 7x7 -> channel norm -> 1x1 (C->4C) -> SPK -> 1x1 (4C->C) -> + input.

    With ``zero_init_residual`` the closing 1x1 starts at zero, so a fresh
    block is the identity.
    """

    def __init__(self, p: BlockParams, rng: np.random.Generator):
        C, hidden = p.channels, p.channels * p.expansion
        self.dw = nn.Conv2d(C, C, 7, rng, padding=3, groups=C)
        self.norm = nn.LayerNorm(C, axis=1)
        self.pw1 = nn.Conv2d(C, hidden, 1, rng)
        self.spk = spk.build(p.spk.with_channels(hidden), rng, spatial=True, spike_free=p.spike_free)
        self.pw2 = nn.Conv2d(hidden, C, 1, rng, zero_init=p.zero_init_residual)

    def forward(self, x: Tensor) -> Tensor:
        T = x.shape[0]
        y = self.pw1(self.norm(self.dw(nn.fold_time(x))))
        y = nn.fold_time(self.spk(nn.unfold_time(y, T)))
        return tn.add(x, nn.unfold_time(self.pw2(y), T))


class SpikeAtConvBlock(nn.Module):
    """ConvNeXt, then window attention, then grid attention, each residual."""

    def __init__(self, p: BlockParams, rng: np.random.Generator):
        self.window = p.window
        self.grid = p.grid
        self.convnext = ConvNeXt(p, rng)
        self.window_attn = attention.build(p.attention, rng, p.spike_free, p.zero_init_residual)
        self.grid_attn = attention.build(p.attention, rng, p.spike_free, p.zero_init_residual)

    def forward(self, x: Tensor) -> Tensor:
        x = self.convnext(x)
        x = tn.add(x, self.attend(x, self.window_attn, "window", self.window))
        return tn.add(x, self.attend(x, self.grid_attn, "grid", self.grid))

    @staticmethod
    def attend(x: Tensor, block: nn.Module, mode: str, size: int) -> Tensor:
        T, N, C, H, W = x.shape
        spec = attention.PartitionSpec(mode, size, H, W)
        tokens = attention.partition(nn.fold_time(x), spec)
        tokens = tn.reshape(tokens, (T, N * spec.groups, spec.tokens, C))
        y = block(tokens)
        y = attention.unpartition(tn.reshape(y, (T * N * spec.groups, spec.tokens, C)), spec)
        return nn.unfold_time(y, T)


class Stem(nn.Module):
    """conv 3x3 stride 2 -> channel norm -> conv 3x3 -> replicate over T -> SPK."""

    def __init__(self, in_channels: int, channels: int, spk_cfg: spk.SpkBlockConfig,
                 rng: np.random.Generator, spike_free: bool = False):
        self.conv1 = nn.Conv2d(in_channels, channels, 3, rng, stride=2, padding=1)
        self.norm = nn.LayerNorm(channels, axis=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, rng, padding=1)
        self.spk = spk.build(spk_cfg.with_channels(channels), rng, spatial=True, spike_free=spike_free)

    def forward(self, image: Tensor, T: int) -> Tensor:
        if image.ndim != 4:
            raise ShapeError(f"stem expects [N, C, H, W], got {image.shape}")
        H, W = image.shape[2:]
        if H % 2 or W % 2:
            raise GeometryError(f"stem needs even spatial dims, got {H}x{W}")
        y = self.conv2(self.norm(self.conv1(image)))
        return self.spk(tn.stack_repeat(y, T))


class Downsample(nn.Module):
    """conv 3x3 stride 2 (C_in -> C_out) -> channel norm."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = nn.Conv2d(c_in, c_out, 3, rng, stride=2, padding=1)
        self.norm = nn.LayerNorm(c_out, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        T, _, _, H, W = x.shape
        if H % 2 or W % 2:
            raise GeometryError(f"downsample needs even spatial dims, got {H}x{W}")
        return nn.unfold_time(self.norm(self.conv(nn.fold_time(x))), T)


class Head(nn.Module):
    """Global average pool, linear per timestep, mean over timesteps."""

    def __init__(self, channels: int, classes: int, rng: np.random.Generator):
        self.fc = nn.Linear(channels, classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        return tn.mean(self.fc(tn.global_avg_pool(x)), axis=0)
