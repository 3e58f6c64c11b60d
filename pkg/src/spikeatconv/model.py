"""SpikeAtConv assembly: stem, four stages of SpikeAtConv blocks, head.

Stage ``k`` (0-based) starts with a stride-2 downsample, so with the stride-2
stem the map entering stage ``k`` is ``resolution / 2**(k + 2)`` on a side.
Parameter names are ``stem.*``, ``stage{k}.down.*``, ``stage{k}.block{j}.*``
and ``head.*``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import attention, blocks, config, nn, spk
from . import tensor as tn
from .errors import ConfigError, GeometryError
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    name: str = "nano"
    dims: tuple[int, ...] = (16, 32, 64, 128)
    depths: tuple[int, ...] = (1, 1, 2, 1)
    T: int = 1
    classes: int = 10
    resolution: int = 64
    in_channels: int = 3
    spk: str = "mbpl"
    thresholds: tuple[float, ...] | None = None
    tau: float = 2.0
    surrogate: str = "atan"
    alpha: float = 2.0
    v_reset: float = 0.0
    v_rest: float = 0.0
    r: float = 1.0
    refractory_steps: int = 0
    convnext_inner: bool = True
    dcl_norm: bool = False
    attn: str = "sisa"
    attn_spk: str = "sl"
    attn_thresholds: tuple[float, ...] | None = None
    head_dim: int = 8
    window: int = 2
    grid: int = 2
    use_softmax: bool = False
    attn_scale: float | None = None
    expansion: int = 4
    spike_free: bool = False
    zero_init_residual: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.dims) != 4 or len(self.depths) != 4:
            raise ConfigError(f"dims and depths need 4 entries, got {self.dims} and {self.depths}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if any(d < 1 for d in self.depths):
            raise ConfigError(f"stage depths must be >= 1, got {self.depths}")
        if self.resolution % 32:
            raise ConfigError(f"resolution {self.resolution} must be divisible by 32 (stem + 4 downsamples)")
        for k, (d, h) in enumerate(zip(self.dims, self.stage_sizes)):
            if d % self.head_dim or d % 2:
                raise ConfigError(f"stage {k} width {d} must be even and divisible by head_dim {self.head_dim}")
            for label, size in (("window", self.window), ("grid", self.grid)):
                if size < 1 or h % size:
                    raise ConfigError(f"{label} {size} does not divide stage {k} map size {h}")
        # Fail early on bad neuron / SPK settings.
        self.spk_config(self.dims[0])
        self.attention_config(self.dims[0])

    @property
    def stage_sizes(self) -> tuple[int, ...]:
        return tuple(self.resolution // 2 ** (k + 2) for k in range(4))

    def lif_kwargs(self) -> dict:
        return dict(tau=self.tau, surrogate=self.surrogate, alpha=self.alpha, v_reset=self.v_reset,
                    v_rest=self.v_rest, r=self.r, refractory_steps=self.refractory_steps)

    def spk_config(self, channels: int) -> spk.SpkBlockConfig:
        return spk.make_config(self.spk, channels, self.thresholds, convnext_inner=self.convnext_inner,
                               dcl_norm=self.dcl_norm, **self.lif_kwargs())

    def attention_config(self, channels: int) -> attention.AttentionConfig:
        site = spk.make_config(self.attn_spk, channels, self.attn_thresholds,
                               convnext_inner=self.convnext_inner, **self.lif_kwargs())
        return attention.AttentionConfig(self.attn, channels // self.head_dim, self.head_dim, site,
                                         self.attn_scale, self.use_softmax, self.expansion)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        return config.sections_to_text({"model": self})

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        sections = config.read_sections(text)
        return config.from_dict(cls, sections.get("model", {}), "model")


PRESETS = {
    "nano": ModelConfig(),
    "tiny": ModelConfig(name="tiny", dims=(64, 128, 256, 512), depths=(1, 3, 6, 1), classes=1000,
                        resolution=224, head_dim=32, window=7, grid=7),
    "base": ModelConfig(name="base", dims=(128, 256, 512, 1024), depths=(2, 6, 12, 2), classes=1000,
                        resolution=224, head_dim=32, window=7, grid=7),
    "large": ModelConfig(name="large", dims=(160, 320, 640, 1280), depths=(2, 6, 16, 2), classes=1000,
                         resolution=224, head_dim=32, window=7, grid=7),
}


def preset(name: str, **changes) -> ModelConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return base.replace(**changes) if changes else base


class Stage(nn.Module):
    def __init__(self, c_in: int, cfg: ModelConfig, k: int, rng: np.random.Generator):
        C = cfg.dims[k]
        self.down = blocks.Downsample(c_in, C, rng)
        params = blocks.BlockParams(C, cfg.spk_config(C), cfg.attention_config(C), cfg.window, cfg.grid,
                                    cfg.expansion, cfg.spike_free, cfg.zero_init_residual)
        for j in range(cfg.depths[k]):
            setattr(self, f"block{j}", blocks.SpikeAtConvBlock(params, rng))
        self.depth = cfg.depths[k]

    def forward(self, x: Tensor) -> Tensor:
        x = self.down(x)
        for j in range(self.depth):
            x = getattr(self, f"block{j}")(x)
        return x


class SpikeAtConv(nn.Module):
    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.stem = blocks.Stem(cfg.in_channels, cfg.dims[0], cfg.spk_config(cfg.dims[0]), rng, cfg.spike_free)
        c_in = cfg.dims[0]
        for k in range(4):
            setattr(self, f"stage{k}", Stage(c_in, cfg, k, rng))
            c_in = cfg.dims[k]
        self.head = blocks.Head(cfg.dims[3], cfg.classes, rng)

    @property
    def dtype(self):
        return self.head.fc.weight.dtype

    def forward(self, images) -> Tensor:
        cfg = self.config
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=self.dtype))
        if x.ndim != 4 or x.shape[1:] != (cfg.in_channels, cfg.resolution, cfg.resolution):
            raise GeometryError(
                f"expected images [N, {cfg.in_channels}, {cfg.resolution}, {cfg.resolution}], got {x.shape}")
        h = self.stem(x, cfg.T)
        for k in range(4):
            h = getattr(self, f"stage{k}")(h)
        return self.head(h)


def build(cfg: ModelConfig) -> SpikeAtConv:
    return SpikeAtConv(cfg)


def forward(model: SpikeAtConv, images) -> Tensor:
    return model(images)


def param_count(model_or_config) -> int:
    if isinstance(model_or_config, ModelConfig):
        model_or_config = build(model_or_config)
    return int(sum(p.size for p in model_or_config.parameters()))


def spike_sites(model: nn.Module):
    """``(name, module)`` for every SPK block in forward order."""
    return [(name, m) for name, m in model.named_modules() if isinstance(m, spk.SpkBlock)]


def spike_rate_report(model: SpikeAtConv, images=None) -> list[tuple[str, float]]:
    """Mean firing rate per SPK site; runs a forward pass first when ``images`` is given."""
    if images is not None:
        with tn.no_grad():
            model(images)
    return [(name, m.last_rate) for name, m in spike_sites(model) if m.last_rate is not None]


def format_rate_report(rows) -> str:
    width = max((len(n) for n, _ in rows), default=4)
    lines = [f"{'site':<{width}}  rate"]
    lines += [f"{name:<{width}}  {rate:.4f}" for name, rate in rows]
    return "\n".join(lines)
