"""SPK blocks: turning real-valued features into spike-form features.

Five variants, all shape preserving:

* ``sl``   one LIF neuron.
* ``rl``   ``s1 = LIF1(x)``, ``out = LIF2(s1) + s1``; values in {0, 1, 2}.
* ``mbpl`` parallel LIF neurons with increasing thresholds; each branch's spikes
  go through one shared lightweight mixer and the results are summed. With
  ``convnext_inner=False`` the raw branch spikes are summed instead, giving
  the count of branches that fired.
* ``hsl``  channel halves go through two different neurons and are re-joined.
* ``dcl``  3x3 and 5x5 convolutions each map C -> C/2 ahead of their own neuron;
  the two spike maps are concatenated back to C channels.

Inputs are spatial ``[T, N, C, H, W]`` (channel axis 2) or token-shaped
``[T, ..., C]`` (channel axis -1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from . import tensor as tn
from .errors import ConfigError, ShapeError
from .neuron import LIFParams, lif_sequence
from .tensor import Tensor

VARIANTS = ("sl", "rl", "mbpl", "hsl", "dcl")
MAX_BRANCHES = 8

DEFAULT_THRESHOLDS = {
    "sl": (1.0,),
    "rl": (1.0, 2.0),
    "mbpl": (0.2, 1.0, 2.0, 4.0),
    "hsl": (1.0, 2.0),
    "dcl": (1.0, 1.0),
}


@dataclass(frozen=True)
class SpkBlockConfig:
    variant: str
    branches: tuple = field(default_factory=tuple)
    channels: int = 0
    convnext_inner: bool = True
    dcl_norm: bool = False

    def __post_init__(self):
        v = self.variant
        if v not in VARIANTS:
            raise ConfigError(f"unknown SPK variant {v!r}; expected one of {VARIANTS}")
        n = len(self.branches)
        if not all(isinstance(b, LIFParams) for b in self.branches):
            raise ConfigError("branches must be LIFParams")
        expected = {"sl": 1, "rl": 2, "hsl": 2, "dcl": 2}
        if v in expected and n != expected[v]:
            raise ConfigError(f"{v} needs exactly {expected[v]} branch(es), got {n}")
        if v == "mbpl":
            if not 2 <= n <= MAX_BRANCHES:
                raise ConfigError(f"mbpl needs 2..{MAX_BRANCHES} branches, got {n}")
            th = [b.v_threshold for b in self.branches]
            if len(set(th)) != n:
                raise ConfigError(f"mbpl thresholds must be distinct, got {th}")
            if th != sorted(th):
                raise ConfigError(f"mbpl thresholds must be strictly increasing, got {th}")
        if v in ("hsl", "dcl") and self.channels % 2:
            raise ConfigError(f"{v} needs an even channel count, got {self.channels}")

    def with_channels(self, channels: int) -> "SpkBlockConfig":
        return replace(self, channels=channels)


def make_config(variant: str, channels: int, thresholds=None, **lif_kwargs) -> SpkBlockConfig:
    """Build a config whose branches share every LIF setting except the threshold."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown SPK variant {variant!r}; expected one of {VARIANTS}")
    convnext_inner = lif_kwargs.pop("convnext_inner", True)
    dcl_norm = lif_kwargs.pop("dcl_norm", False)
    th = tuple(thresholds) if thresholds else DEFAULT_THRESHOLDS[variant]
    branches = tuple(LIFParams(v_threshold=float(t), **lif_kwargs) for t in th)
    return SpkBlockConfig(variant, branches, channels, convnext_inner, dcl_norm)


def _require(cfg: SpkBlockConfig, variant: str):
    if cfg.variant != variant:
        raise ConfigError(f"expected a {variant} config, got {cfg.variant}")


def sl_forward(cfg: SpkBlockConfig, x: Tensor) -> Tensor:
    _require(cfg, "sl")
    return lif_sequence(cfg.branches[0], x)


def rl_forward(cfg: SpkBlockConfig, x: Tensor) -> Tensor:
    _require(cfg, "rl")
    s1 = lif_sequence(cfg.branches[0], x)
    return tn.add(lif_sequence(cfg.branches[1], s1), s1)


def mbpl_forward(cfg: SpkBlockConfig, x: Tensor, mixer=None) -> Tensor:
    _require(cfg, "mbpl")
    spikes = [lif_sequence(b, x) for b in cfg.branches]
    if cfg.convnext_inner:
        if mixer is None:
            raise ConfigError("mbpl with convnext_inner needs a mixer module")
        spikes = [mixer(s) for s in spikes]
    out = spikes[0]
    for s in spikes[1:]:
        out = tn.add(out, s)
    return out


def hsl_forward(cfg: SpkBlockConfig, x: Tensor, channel_axis: int = -1) -> Tensor:
    _require(cfg, "hsl")
    c = x.shape[channel_axis]
    if c % 2:
        raise ShapeError(f"hsl needs an even channel count, got {c}")
    lo, hi = tn.split(x, [c // 2, c // 2], axis=channel_axis)
    return tn.concat([lif_sequence(cfg.branches[0], lo), lif_sequence(cfg.branches[1], hi)],
                     axis=channel_axis)


def dcl_forward(cfg: SpkBlockConfig, x: Tensor, conv3: nn.Conv2d, conv5: nn.Conv2d,
                norm3: nn.LayerNorm | None = None, norm5: nn.LayerNorm | None = None) -> Tensor:
    _require(cfg, "dcl")
    if x.ndim != 5:
        raise ShapeError(f"dcl needs spatial input [T, N, C, H, W], got {x.shape}")
    T, _, C, H, W = x.shape
    if C % 2:
        raise ShapeError(f"dcl needs an even channel count, got {C}")
    if H < 1 or W < 1:
        raise ShapeError(f"dcl needs non-empty spatial dims, got {H}x{W}")
    flat = nn.fold_time(x)
    outs = []
    for conv, norm, params in ((conv3, norm3, cfg.branches[0]), (conv5, norm5, cfg.branches[1])):
        y = conv(flat)
        if norm is not None:
            y = norm(y)
        outs.append(lif_sequence(params, nn.unfold_time(y, T)))
    return tn.concat(outs, axis=2)


class BranchMixer(nn.Module):
    """Shared smooth mixer applied to each MBPL branch.

    Spatial inputs: depthwise 7x7, channel norm, pointwise C -> C.
    Token inputs: layer norm, linear C -> C. Contains no spiking neuron.
    """

    def __init__(self, channels: int, rng: np.random.Generator, spatial: bool):
        self.spatial = spatial
        if spatial:
            self.dw = nn.Conv2d(channels, channels, 7, rng, padding=3, groups=channels)
            self.norm = nn.LayerNorm(channels, axis=1)
            self.pw = nn.Conv2d(channels, channels, 1, rng)
        else:
            self.norm = nn.LayerNorm(channels)
            self.pw = nn.Linear(channels, channels, rng)

    def forward(self, s: Tensor) -> Tensor:
        if not self.spatial:
            return self.pw(self.norm(s))
        T = s.shape[0]
        y = self.pw(self.norm(self.dw(nn.fold_time(s))))
        return nn.unfold_time(y, T)


class SpkBlock(nn.Module):
    """Stateful wrapper: owns any parameters and records the last firing rate."""

    def __init__(self, cfg: SpkBlockConfig, rng: np.random.Generator, spatial: bool = True):
        self.cfg = cfg
        self.spatial = spatial
        self.channel_axis = 2 if spatial else -1
        self.last_rate = None
        C = cfg.channels
        if cfg.variant == "mbpl" and cfg.convnext_inner:
            self.mixer = BranchMixer(C, rng, spatial)
        if cfg.variant == "dcl":
            if not spatial:
                raise ConfigError("dcl needs spatial input; it cannot be used on tokens")
            self.conv3 = nn.Conv2d(C, C // 2, 3, rng, padding=1, bias=False)
            self.conv5 = nn.Conv2d(C, C // 2, 5, rng, padding=2, bias=False)
            if cfg.dcl_norm:
                self.norm3 = nn.LayerNorm(C // 2, axis=1)
                self.norm5 = nn.LayerNorm(C // 2, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if cfg.channels and x.shape[self.channel_axis] != cfg.channels:
            raise ShapeError(f"SPK block expects {cfg.channels} channels, got input {x.shape}")
        v = cfg.variant
        if v == "sl":
            out = sl_forward(cfg, x)
            self.last_rate = float(out.data.mean())
        elif v == "rl":
            s1 = lif_sequence(cfg.branches[0], x)
            s2 = lif_sequence(cfg.branches[1], s1)
            out = tn.add(s2, s1)
            self.last_rate = float((s1.data.mean() + s2.data.mean()) / 2)
        elif v == "mbpl":
            spikes = [lif_sequence(b, x) for b in cfg.branches]
            self.last_rate = float(np.mean([s.data.mean() for s in spikes]))
            mixed = [self.mixer(s) for s in spikes] if cfg.convnext_inner else spikes
            out = mixed[0]
            for s in mixed[1:]:
                out = tn.add(out, s)
        elif v == "hsl":
            out = hsl_forward(cfg, x, self.channel_axis)
            self.last_rate = float(out.data.mean())
        else:
            out = dcl_forward(cfg, x, self.conv3, self.conv5,
                              getattr(self, "norm3", None), getattr(self, "norm5", None))
            self.last_rate = float(out.data.mean())
        return out


class SmoothActivation(nn.Module):
    """GELU stand-in used when the model is built spike-free."""

    last_rate = None

    def forward(self, x: Tensor) -> Tensor:
        return tn.gelu(x)


def build(cfg: SpkBlockConfig, rng: np.random.Generator, spatial: bool = True,
          spike_free: bool = False) -> nn.Module:
    if spike_free:
        return SmoothActivation()
    return SpkBlock(cfg, rng, spatial)
