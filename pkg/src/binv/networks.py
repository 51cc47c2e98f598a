"""Architecture primitives and builders for the generator, paired critic, and
direct estimators.

All networks share the same building blocks: 3x3 convolutions, leaky ReLU
(slope 0.2), residual blocks, 2x2 average pooling on the way down and
pixel-shuffle upsampling on the way up.  The generator and mean estimator are
residual U-Nets with an additive skip from the conditioning image; the critic
uses the same downsampling trunk, stops at the lowest resolution and finishes
with two fully connected layers.

The critic deliberately contains no batch normalization: the gradient penalty
needs per-sample input gradients, which batch coupling would corrupt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn

# batchnorm running-average decay 0.9 => torch momentum 0.1
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass(frozen=True)
class NetConfig:
    image_size: int
    base_channels: int = 16
    n_scales: int = 2
    leaky_slope: float = 0.2
    use_batchnorm: bool = True
    z_channels: int = 0
    channel_growth: int = 2
    max_channels: int = 64
    fc_width: int = 64
    zero_init_head: bool = True

    def __post_init__(self):
        if self.image_size % (2**self.n_scales) != 0:
            raise ValueError("image_size must be divisible by 2^n_scales")
        if self.image_size // (2**self.n_scales) < 4:
            raise ValueError("minimum resolution after downsampling is 4")

    def channels_at(self, scale: int) -> int:
        return min(self.base_channels * self.channel_growth**scale, self.max_channels)

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "n_scales": self.n_scales,
            "leaky_slope": self.leaky_slope,
            "use_batchnorm": self.use_batchnorm,
            "z_channels": self.z_channels,
            "channel_growth": self.channel_growth,
            "max_channels": self.max_channels,
            "fc_width": self.fc_width,
            "zero_init_head": self.zero_init_head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def avgpool2(x: torch.Tensor) -> torch.Tensor:
    """Average over 2x2 pixel blocks; halves both spatial dims."""
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError("avgpool2 requires even spatial dims")
    return torch.nn.functional.avg_pool2d(x, 2)


def pixelshuffle2(x: torch.Tensor) -> torch.Tensor:
    """Spread 4c channels into 2x2 spatial blocks: (4c, n, n) -> (c, 2n, 2n)."""
    if x.shape[-3] % 4:
        raise ValueError("pixelshuffle2 requires channels divisible by 4")
    return torch.nn.functional.pixel_shuffle(x, 2)


def space_to_depth2(x: torch.Tensor) -> torch.Tensor:
    """Inverse of pixelshuffle2: (c, 2n, 2n) -> (4c, n, n)."""
    return torch.nn.functional.pixel_unshuffle(x, 2)


class ResidualBlock(nn.Module):
    """norm -> act -> conv -> norm -> act -> conv, added to a 1x1 conv of the
    first normalization's output."""

    def __init__(self, in_channels: int, out_channels: int, slope: float = 0.2,
                 use_batchnorm: bool = True):
        super().__init__()
        norm = lambda c: (
            nn.BatchNorm2d(c, momentum=BN_MOMENTUM, eps=BN_EPS) if use_batchnorm else nn.Identity()
        )
        self.norm1 = norm(in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.norm2 = norm(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Conv2d(in_channels, out_channels, 1)
        self.act = nn.LeakyReLU(slope)

    def forward(self, x):
        h = self.norm1(x)
        main = self.conv2(self.act(self.norm2(self.conv1(self.act(h)))))
        return main + self.skip(h)


class UNetTrunk(nn.Module):
    """Residual U-Net body: downsample-then-resblock to the floor resolution,
    then pixelshuffle upsampling with concatenating skip connections."""

    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        c0 = cfg.base_channels
        self.stem = nn.Conv2d(in_channels, c0, 3, padding=1)
        self.down = nn.ModuleList(
            [
                ResidualBlock(cfg.channels_at(s), cfg.channels_at(s + 1), cfg.leaky_slope,
                              cfg.use_batchnorm)
                for s in range(cfg.n_scales)
            ]
        )
        self.bottom = ResidualBlock(
            cfg.channels_at(cfg.n_scales), cfg.channels_at(cfg.n_scales),
            cfg.leaky_slope, cfg.use_batchnorm,
        )
        self.up_proj = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for s in range(cfg.n_scales, 0, -1):
            c_lo, c_hi = cfg.channels_at(s), cfg.channels_at(s - 1)
            self.up_proj.append(nn.Conv2d(c_lo, 4 * c_hi, 1))
            self.up_blocks.append(
                ResidualBlock(2 * c_hi, c_hi, cfg.leaky_slope, cfg.use_batchnorm)
            )

    def forward(self, x):
        feats = [self.stem(x)]
        h = feats[0]
        for block in self.down:
            h = block(avgpool2(h))
            feats.append(h)
        h = self.bottom(h)
        for proj, block, skip in zip(self.up_proj, self.up_blocks, feats[-2::-1]):
            h = pixelshuffle2(proj(h))
            h = block(torch.cat([h, skip], dim=1))
        return h


class _ImageToImage(nn.Module):
    def __init__(self, in_channels: int, cfg: NetConfig, additive_skip: bool,
                 nonneg_output: bool):
        super().__init__()
        self.trunk = UNetTrunk(in_channels, cfg)
        self.head = nn.Conv2d(cfg.base_channels, 1, 3, padding=1)
        self.additive_skip = additive_skip
        self.nonneg_output = nonneg_output
        if cfg.zero_init_head:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, *inputs):
        x = torch.cat(inputs, dim=1)
        out = self.head(self.trunk(x))
        if self.additive_skip:
            out = out + inputs[-1]  # conditioning image is the last input
        if self.nonneg_output:
            out = torch.nn.functional.softplus(out)
        return out


class _Critic(nn.Module):
    def __init__(self, in_channels: int, cfg: NetConfig):
        super().__init__()
        c0 = cfg.base_channels
        self.stem = nn.Conv2d(in_channels, c0, 3, padding=1)
        blocks = [ResidualBlock(c0, c0, cfg.leaky_slope, use_batchnorm=False)]
        for s in range(cfg.n_scales):
            blocks.append(
                ResidualBlock(cfg.channels_at(s), cfg.channels_at(s + 1), cfg.leaky_slope,
                              use_batchnorm=False)
            )
        self.blocks = nn.ModuleList(blocks)
        floor = cfg.image_size // (2**cfg.n_scales)
        flat = cfg.channels_at(cfg.n_scales) * floor * floor
        self.fc1 = nn.Linear(flat, cfg.fc_width)
        self.fc2 = nn.Linear(cfg.fc_width, 1)
        self.act = nn.LeakyReLU(cfg.leaky_slope)

    def forward(self, *inputs):
        h = self.stem(torch.cat(inputs, dim=1))
        h = self.blocks[0](h)
        for block in self.blocks[1:]:
            h = block(avgpool2(h))
        h = h.flatten(1)
        return self.fc2(self.act(self.fc1(h))).squeeze(-1)


@dataclass
class NetworkHandle:
    module: nn.Module
    kind: str
    config: NetConfig
    extras: dict = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.module.parameters())

    def parameters(self):
        return self.module.parameters()

    def __call__(self, *inputs):
        return self.module(*inputs)

    def check_finite(self):
        for name, p in self.module.named_parameters():
            if not torch.isfinite(p).all():
                raise RuntimeError(f"parameter {name} is non-finite")


def _seeded(seed: int | None):
    if seed is not None:
        torch.manual_seed(seed)


def build_generator(cfg: NetConfig, seed: int | None = None) -> NetworkHandle:
    """G(z, y) = net(cat(z, y)) + y with z white noise shaped like the image."""
    _seeded(seed)
    z_ch = cfg.z_channels or 1
    module = _ImageToImage(z_ch + 1, cfg, additive_skip=True, nonneg_output=False)
    handle = NetworkHandle(module, "generator", cfg)
    handle.check_finite()
    return handle


def build_discriminator(cfg: NetConfig, paired: bool = True, seed: int | None = None) -> NetworkHandle:
    """Critic on (x1, x2, y) channel triples (or (x, y) pairs for the
    unconditional ablation); scalar output per batch item; no batchnorm."""
    _seeded(seed)
    in_ch = 3 if paired else 2
    module = _Critic(in_ch, cfg)
    handle = NetworkHandle(module, "discriminator", cfg, extras={"paired": paired})
    handle.check_finite()
    return handle


def build_estimator(cfg: NetConfig, nonneg_output: bool, seed: int | None = None) -> NetworkHandle:
    """Y -> X estimator; the mean flavor keeps the additive skip from y, the
    variance flavor maps through softplus and has no skip."""
    _seeded(seed)
    module = _ImageToImage(
        1, cfg, additive_skip=not nonneg_output, nonneg_output=nonneg_output
    )
    kind = "estimator_var" if nonneg_output else "estimator_mean"
    handle = NetworkHandle(module, kind, cfg)
    handle.check_finite()
    return handle


# ---------------------------------------------------------------------------
# checkpoint I/O: one tensor file per parameter plus a JSON index
# ---------------------------------------------------------------------------

def state_tensors(module: nn.Module) -> dict:
    """Name -> float32 ndarray for every parameter and buffer."""
    out = {}
    for name, t in list(module.state_dict().items()):
        out[name] = t.detach().cpu().to(torch.float32).numpy()
    return out


def load_state_tensors(module: nn.Module, tensors: dict) -> None:
    state = module.state_dict()
    converted = {}
    for name, t in state.items():
        if name not in tensors:
            raise KeyError(f"checkpoint missing parameter {name}")
        arr = torch.from_numpy(tensors[name].copy())
        converted[name] = arr.to(t.dtype).reshape(t.shape)
    module.load_state_dict(converted)
