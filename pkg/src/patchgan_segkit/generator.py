"""U-Net generator mapping multi-channel images to single-channel soft masks.

The encoder stacks strided 4x4 convolutions (leaky ReLU, then batch norm on
all but the first block); the decoder mirrors it with 4x4 transposed
convolutions, concatenating each upsampled feature map with the matching
encoder output. The final block squashes through a sigmoid so outputs live
in (0, 1). Block indices for dropout are global: encoder blocks are
0..depth-1, decoder blocks depth..2*depth-1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError

DEFAULT_ENCODER_FILTERS = (64, 128, 256, 512, 512, 512)


def default_dropout_blocks(depth: int) -> frozenset[int]:
    """Bottleneck-adjacent band: deepest half of the encoder blocks plus the
    earliest half of the decoder blocks (global indices)."""
    k = depth // 2
    return frozenset(range(depth - k, depth + k))


@dataclass
class GeneratorSpec:
    """Architecture configuration from which a generator is built."""

    in_channels: int = 4
    out_channels: int = 1
    depth: int = 6
    encoder_filters: tuple[int, ...] = DEFAULT_ENCODER_FILTERS
    dropout_rate: float = 0.5
    dropout_blocks: frozenset[int] | None = None  # None -> bottleneck-adjacent band
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        self.encoder_filters = tuple(int(f) for f in self.encoder_filters)
        if self.dropout_blocks is not None:
            self.dropout_blocks = frozenset(int(b) for b in self.dropout_blocks)

    def validate(self) -> None:
        if self.depth < 2:
            raise ConfigurationError(f"depth must be >= 2, got {self.depth}")
        if len(self.encoder_filters) != self.depth:
            raise ConfigurationError(
                f"encoder_filters must have exactly depth={self.depth} entries, "
                f"got {len(self.encoder_filters)}"
            )
        if any(f <= 0 for f in self.encoder_filters):
            raise ConfigurationError(
                f"encoder_filters must all be > 0, got {self.encoder_filters}"
            )
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError(
                f"in_channels and out_channels must be >= 1, got "
                f"{self.in_channels} and {self.out_channels}"
            )
        if not 0.0 <= self.dropout_rate <= 1.0:
            raise ConfigurationError(
                f"dropout_rate must lie in [0, 1], got {self.dropout_rate}"
            )
        valid = range(2 * self.depth)
        if self.dropout_blocks is not None and not set(self.dropout_blocks) <= set(valid):
            bad = sorted(set(self.dropout_blocks) - set(valid))
            raise ConfigurationError(
                f"dropout_blocks contains invalid block indices {bad}; valid "
                f"indices are 0..{2 * self.depth - 1}"
            )

    @property
    def resolved_dropout_blocks(self) -> frozenset[int]:
        if self.dropout_blocks is None:
            return default_dropout_blocks(self.depth)
        return self.dropout_blocks


class _ConvBlock(nn.Module):
    """One encoder or decoder block: (transposed) conv, leaky ReLU, batch
    norm, dropout — each stage optional per configuration."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        slope: float,
        transposed: bool,
        norm: bool,
        activation: bool,
        dropout: float,
    ):
        super().__init__()
        conv_cls = nn.ConvTranspose2d if transposed else nn.Conv2d
        self.conv = conv_cls(in_ch, out_ch, kernel_size=4, stride=2, padding=1)
        self.act = nn.LeakyReLU(slope) if activation else None
        self.norm = nn.BatchNorm2d(out_ch) if norm else None
        self.drop = nn.Dropout(dropout) if dropout > 0 else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        if self.act is not None:
            x = self.act(x)
        if self.norm is not None:
            x = self.norm(x)
        if self.drop is not None:
            x = self.drop(x)
        return x


class GeneratorNetwork(nn.Module):
    """U-Net generator; parameter names are a pure function of the spec, so
    rebuilds from an equal spec always produce an identical state_dict layout
    (only the first conv kernel's shape depends on in_channels)."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        f = spec.encoder_filters
        d = spec.depth
        drop_blocks = spec.resolved_dropout_blocks

        def rate(idx: int) -> float:
            return spec.dropout_rate if idx in drop_blocks else 0.0

        enc = []
        for i in range(d):
            enc.append(
                _ConvBlock(
                    in_ch=spec.in_channels if i == 0 else f[i - 1],
                    out_ch=f[i],
                    slope=spec.leaky_slope,
                    transposed=False,
                    norm=i > 0,  # raw inputs are not batch-normalized
                    activation=True,
                    dropout=rate(i),
                )
            )
        self.enc = nn.ModuleList(enc)

        dec = []
        for j in range(d):
            last = j == d - 1
            dec.append(
                _ConvBlock(
                    in_ch=f[d - 1] if j == 0 else 2 * f[d - 1 - j],
                    out_ch=spec.out_channels if last else f[d - 2 - j],
                    slope=spec.leaky_slope,
                    transposed=True,
                    norm=not last,
                    activation=not last,  # the final block's activation is the sigmoid
                    dropout=rate(d + j),
                )
            )
        self.dec = nn.ModuleList(dec)

    def _check_input(self, images: torch.Tensor) -> None:
        if images.dim() != 4:
            raise ShapeError(
                f"expected a 4-d NCHW batch, got {images.dim()}-d tensor"
            )
        n, c, h, w = images.shape
        if c != self.spec.in_channels:
            raise ShapeError(
                f"expected {self.spec.in_channels} input channels, got {c}"
            )
        step = 2 ** self.spec.depth
        if h % step != 0 or w % step != 0:
            raise ShapeError(
                f"input spatial dims must be divisible by 2^depth={step}, "
                f"got {h}x{w}"
            )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        self._check_input(images)
        feats = []
        x = images
        for block in self.enc:
            x = block(x)
            feats.append(x)
        d = self.spec.depth
        y = feats[-1]
        for j, block in enumerate(self.dec):
            y = block(y)
            if j < d - 1:
                # encoder block d-1-j feeds decoder block j+1 (1-based: i -> depth-i)
                y = torch.cat([y, feats[d - 2 - j]], dim=1)
        return torch.sigmoid(y)

    def input_parameter_names(self) -> list[str]:
        """State-dict keys of the input layer (first encoder convolution)."""
        return ["enc.0.conv.weight", "enc.0.conv.bias"]


def init_network_parameters(module: nn.Module, seed: int) -> None:
    """Seeded init: conv kernels ~ N(0, 0.02), batch-norm scales ~ N(1, 0.02),
    biases zero. Deterministic given (module layout, seed)."""
    gen = torch.Generator().manual_seed(seed)
    for _, m in module.named_modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            m.weight.data.normal_(0.0, 0.02, generator=gen)
            if m.bias is not None:
                m.bias.data.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            m.weight.data.normal_(1.0, 0.02, generator=gen)
            m.bias.data.zero_()


def build_generator(spec: GeneratorSpec, seed: int) -> GeneratorNetwork:
    """Build a generator with deterministic, seeded initialization."""
    spec.validate()
    net = GeneratorNetwork(spec)
    init_network_parameters(net, seed)
    net.eval()
    return net


def generator_forward(
    net: GeneratorNetwork, images: torch.Tensor, training: bool = False
) -> torch.Tensor:
    """Evaluate the generator on an NCHW batch.

    With ``training=False`` dropout is disabled and batch norm uses its
    running statistics, so the map is deterministic. Gradient tracking is
    left to the caller's autograd context.
    """
    net.train(training)
    return net(images)
