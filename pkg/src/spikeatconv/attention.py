"""Window/grid token partitioning and spike-driven attention blocks.

Window mode gathers contiguous ``P x P`` tiles; grid mode gathers a strided
``G x G`` lattice so that token ``(i, j)`` of cell ``(a, b)`` is pixel
``(a + i*H/G, b + j*W/G)``, which lets one attention call mix pixels from
across the whole map.

Two attention variants operate on token tensors ``[T, B, L, C]``:

``sisa``: Q, K, V projections, each converted to spikes; ``scores = Qs Ks^T *
scale`` (softmax optional); ``out = SPK(proj(scores Vs))``.

``bdsa``: no projections; ``S = SPK(x)`` plays Q, K and V, so
``out = (S S^T * scale) S``.

Both finish with a spiking feed-forward (linear, SPK, linear, SPK). A layer
norm precedes the first spike conversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import spk
from . import tensor as tn
from .errors import ConfigError, GeometryError, ShapeError
from .tensor import Tensor

MODES = ("window", "grid")
ATTENTION_VARIANTS = ("sisa", "bdsa")


@dataclass(frozen=True)
class PartitionSpec:
    mode: str
    size: int
    height: int
    width: int

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown partition mode {self.mode!r}; expected one of {MODES}")
        if self.size < 1:
            raise GeometryError(f"partition size must be >= 1, got {self.size}")
        if self.height % self.size or self.width % self.size:
            raise GeometryError(
                f"{self.mode} size {self.size} does not divide feature map {self.height}x{self.width}")

    @property
    def tokens(self) -> int:
        return self.size * self.size

    @property
    def groups(self) -> int:
        """Windows (or grid cells) per image."""
        return (self.height // self.size) * (self.width // self.size)


def partition(x: Tensor, spec: PartitionSpec) -> Tensor:
    """``[N, C, H, W] -> [N * groups, L, C]``."""
    if x.ndim != 4:
        raise ShapeError(f"partition expects [N, C, H, W], got {x.shape}")
    N, C, H, W = x.shape
    if (H, W) != (spec.height, spec.width):
        raise GeometryError(f"partition spec is for {spec.height}x{spec.width}, input is {H}x{W}")
    s = spec.size
    if spec.mode == "window":
        # [N, C, H/P, P, W/P, P] -> [N, H/P, W/P, P, P, C]
        y = tn.reshape(x, (N, C, H // s, s, W // s, s))
        y = tn.permute(y, (0, 2, 4, 3, 5, 1))
    else:
        # [N, C, G, H/G, G, W/G] -> [N, H/G, W/G, G, G, C]
        y = tn.reshape(x, (N, C, s, H // s, s, W // s))
        y = tn.permute(y, (0, 3, 5, 2, 4, 1))
    return tn.reshape(y, (N * spec.groups, spec.tokens, C))


def unpartition(tokens: Tensor, spec: PartitionSpec) -> Tensor:
    """Exact inverse of :func:`partition`."""
    if tokens.ndim != 3 or tokens.shape[1] != spec.tokens or tokens.shape[0] % spec.groups:
        raise ShapeError(f"unpartition: tokens {tokens.shape} do not match {spec}")
    B, _, C = tokens.shape
    N = B // spec.groups
    H, W, s = spec.height, spec.width, spec.size
    if spec.mode == "window":
        y = tn.reshape(tokens, (N, H // s, W // s, s, s, C))
        y = tn.permute(y, (0, 5, 1, 3, 2, 4))
    else:
        y = tn.reshape(tokens, (N, H // s, W // s, s, s, C))
        y = tn.permute(y, (0, 5, 3, 1, 4, 2))
    return tn.reshape(y, (N, C, H, W))


@dataclass(frozen=True)
class AttentionConfig:
    variant: str
    heads: int
    head_dim: int
    spk: spk.SpkBlockConfig
    scale: float | None = None
    use_softmax: bool = False
    ffn_ratio: int = 4

    def __post_init__(self):
        if self.variant not in ATTENTION_VARIANTS:
            raise ConfigError(f"unknown attention variant {self.variant!r}; expected {ATTENTION_VARIANTS}")
        if self.heads < 1 or self.head_dim < 1:
            raise ConfigError(f"heads and head_dim must be >= 1, got {self.heads}, {self.head_dim}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError(f"scale must be > 0, got {self.scale}")
        if self.spk.variant == "dcl":
            raise ConfigError("dcl SPK blocks need spatial input and cannot sit inside attention")

    @property
    def channels(self) -> int:
        return self.heads * self.head_dim

    @property
    def score_scale(self) -> float:
        return self.scale if self.scale is not None else 1.0 / self.head_dim


def split_heads(x: Tensor, heads: int) -> Tensor:
    """``[..., L, C] -> [..., heads, L, C/heads]``."""
    *lead, L, C = x.shape
    if C % heads:
        raise ShapeError(f"channel width {C} not divisible by {heads} heads")
    y = tn.reshape(x, tuple(lead) + (L, heads, C // heads))
    n = len(lead)
    return tn.permute(y, tuple(range(n)) + (n + 1, n, n + 2))


def merge_heads(x: Tensor) -> Tensor:
    """Inverse of :func:`split_heads`."""
    *lead, h, L, d = x.shape
    n = len(lead)
    y = tn.permute(x, tuple(range(n)) + (n + 1, n, n + 2))
    return tn.reshape(y, tuple(lead) + (L, h * d))


def spike_attention(q: Tensor, k: Tensor, v: Tensor, scale: float, use_softmax: bool = False) -> Tensor:
    """``(q k^T * scale) v`` over the last two axes, optionally softmaxing the scores."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shape mismatch: q {q.shape}, k {k.shape}, v {v.shape}")
    kt = tn.permute(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = tn.scale(tn.matmul(q, kt), scale)
    if use_softmax:
        scores = tn.softmax(scores, axis=-1)
    return tn.matmul(scores, v)


class SpikingFFN(nn.Module):
    """linear -> SPK -> linear -> SPK; the second linear may start at zero."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, spike_free: bool = False,
                 zero_init: bool = True):
        C, hidden = cfg.channels, cfg.channels * cfg.ffn_ratio
        self.fc1 = nn.Linear(C, hidden, rng)
        self.spk1 = spk.build(cfg.spk.with_channels(hidden), rng, spatial=False, spike_free=spike_free)
        self.fc2 = nn.Linear(hidden, C, rng, zero_init=zero_init)
        self.spk2 = spk.build(cfg.spk.with_channels(C), rng, spatial=False, spike_free=spike_free)

    def forward(self, x: Tensor) -> Tensor:
        return self.spk2(self.fc2(self.spk1(self.fc1(x))))


class SISA(nn.Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, spike_free: bool = False,
                 zero_init: bool = True):
        if cfg.variant != "sisa":
            raise ConfigError(f"SISA built from a {cfg.variant} config")
        C = cfg.channels
        self.cfg = cfg
        self.norm = nn.LayerNorm(C)
        self.qkv = nn.Linear(C, 3 * C, rng)
        site = cfg.spk.with_channels(C)
        self.spk_q = spk.build(site, rng, spatial=False, spike_free=spike_free)
        self.spk_k = spk.build(site, rng, spatial=False, spike_free=spike_free)
        self.spk_v = spk.build(site, rng, spatial=False, spike_free=spike_free)
        # Starting proj at zero silences spk_o and hence the whole branch while
        # surrogate gradients still reach every parameter. A zero fc2 instead
        # would never receive gradient, since spk1 is silent at init.
        self.proj = nn.Linear(C, C, rng, zero_init=zero_init)
        self.spk_o = spk.build(site, rng, spatial=False, spike_free=spike_free)
        self.ffn = SpikingFFN(cfg, rng, spike_free, zero_init=False)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.attend(x))

    def attend(self, x: Tensor) -> Tensor:
        """Attention half only, ``[T, B, L, C] -> [T, B, L, C]``."""
        cfg = self.cfg
        if x.ndim != 4 or x.shape[-1] != cfg.channels:
            raise ShapeError(f"SISA expects [T, B, L, {cfg.channels}], got {x.shape}")
        C = cfg.channels
        q, k, v = tn.split(self.qkv(self.norm(x)), [C, C, C], axis=-1)
        qs, ks, vs = self.spk_q(q), self.spk_k(k), self.spk_v(v)
        a = spike_attention(split_heads(qs, cfg.heads), split_heads(ks, cfg.heads),
                            split_heads(vs, cfg.heads), cfg.score_scale, cfg.use_softmax)
        return self.spk_o(self.proj(merge_heads(a)))


class BDSA(nn.Module):
    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, spike_free: bool = False,
                 zero_init: bool = True):
        if cfg.variant != "bdsa":
            raise ConfigError(f"BDSA built from a {cfg.variant} config")
        self.cfg = cfg
        self.norm = nn.LayerNorm(cfg.channels)
        self.spk_s = spk.build(cfg.spk.with_channels(cfg.channels), rng, spatial=False,
                               spike_free=spike_free)
        self.ffn = SpikingFFN(cfg, rng, spike_free, zero_init)

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.attend(x))

    def attend(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[-1] != cfg.channels:
            raise ShapeError(f"BDSA expects [T, B, L, {cfg.channels}], got {x.shape}")
        s = split_heads(self.spk_s(self.norm(x)), cfg.heads)
        return merge_heads(spike_attention(s, s, s, cfg.score_scale, cfg.use_softmax))


def build(cfg: AttentionConfig, rng: np.random.Generator, spike_free: bool = False,
          zero_init: bool = True) -> nn.Module:
    return (SISA if cfg.variant == "sisa" else BDSA)(cfg, rng, spike_free, zero_init)

