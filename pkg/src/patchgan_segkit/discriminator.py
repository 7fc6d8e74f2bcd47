"""Patch-wise discriminator over concatenated image+mask inputs.

A stack of 4x4 convolutions (stride per spec, leaky ReLU throughout, batch
norm on all but the first layer) followed by a final stride-1 single-channel
4x4 convolution and a sigmoid. Each unit of the output map scores one input
patch; with the default spec a 256x256 input yields a 30x30 map whose units
each see a 70x70 patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, ShapeError

KERNEL_SIZE = 4
PADDING = 1


@dataclass
class DiscriminatorSpec:
    """Architecture configuration; a final stride-1 single-channel 4x4
    convolution is always appended after ``layer_filters``."""

    image_channels: int = 4
    mask_channels: int = 1
    layer_filters: tuple[int, ...] = (64, 128, 256, 512)
    strides: tuple[int, ...] = (2, 2, 2, 1)
    leaky_slope: float = 0.2

    def __post_init__(self) -> None:
        self.layer_filters = tuple(int(f) for f in self.layer_filters)
        self.strides = tuple(int(s) for s in self.strides)

    def validate(self) -> None:
        if len(self.layer_filters) != len(self.strides):
            raise ConfigurationError(
                f"layer_filters and strides must have equal length, got "
                f"{len(self.layer_filters)} vs {len(self.strides)}"
            )
        if any(f <= 0 for f in self.layer_filters):
            raise ConfigurationError(
                f"layer_filters must all be > 0, got {self.layer_filters}"
            )
        if any(s < 1 for s in self.strides):
            raise ConfigurationError(f"strides must all be >= 1, got {self.strides}")
        if self.image_channels < 1 or self.mask_channels < 1:
            raise ConfigurationError(
                f"image_channels and mask_channels must be >= 1, got "
                f"{self.image_channels} and {self.mask_channels}"
            )

    @property
    def in_channels(self) -> int:
        return self.image_channels + self.mask_channels


class _DiscLayer(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int, slope: float, norm: bool):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, KERNEL_SIZE, stride=stride, padding=PADDING)
        self.act = nn.LeakyReLU(slope)
        self.norm = nn.BatchNorm2d(out_ch) if norm else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.act(self.conv(x))
        if self.norm is not None:
            x = self.norm(x)
        return x


class DiscriminatorNetwork(nn.Module):
    """Patch classifier; `forward` returns probabilities, `logits` the
    pre-sigmoid map for numerically stable BCE."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        spec.validate()
        self.spec = spec
        layers = []
        prev = spec.in_channels
        for i, (f, s) in enumerate(zip(spec.layer_filters, spec.strides)):
            layers.append(_DiscLayer(prev, f, s, spec.leaky_slope, norm=i > 0))
            prev = f
        self.layers = nn.ModuleList(layers)
        self.final = nn.Conv2d(prev, 1, KERNEL_SIZE, stride=1, padding=PADDING)

    def _check_inputs(self, images: torch.Tensor, masks: torch.Tensor) -> None:
        if images.dim() != 4 or masks.dim() != 4:
            raise ShapeError(
                f"expected 4-d NCHW batches, got {images.dim()}-d and {masks.dim()}-d"
            )
        if images.shape[1] != self.spec.image_channels:
            raise ShapeError(
                f"expected {self.spec.image_channels} image channels, got "
                f"{images.shape[1]}"
            )
        if masks.shape[1] != self.spec.mask_channels:
            raise ShapeError(
                f"expected {self.spec.mask_channels} mask channels, got "
                f"{masks.shape[1]}"
            )
        if images.shape[0] != masks.shape[0] or images.shape[2:] != masks.shape[2:]:
            raise ShapeError(
                f"images and masks must share batch and spatial dims, got "
                f"{tuple(images.shape)} vs {tuple(masks.shape)}"
            )
        h, w = output_spatial(self.spec, images.shape[2], images.shape[3])
        if h < 1 or w < 1:
            raise ShapeError(
                f"input {images.shape[2]}x{images.shape[3]} is too small for "
                f"this layer stack (output would be {h}x{w})"
            )

    def logits(self, images: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        self._check_inputs(images, masks)
        x = torch.cat([images, masks.to(images.dtype)], dim=1)
        for layer in self.layers:
            x = layer(x)
        return self.final(x)

    def forward(self, images: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(images, masks))

    def input_parameter_names(self) -> list[str]:
        """State-dict keys of the input layer (first convolution of the stack,
        or the final convolution when the stack is empty)."""
        if self.layers:
            return ["layers.0.conv.weight", "layers.0.conv.bias"]
        return ["final.weight", "final.bias"]


def _conv_out(size: int, stride: int) -> int:
    return (size + 2 * PADDING - KERNEL_SIZE) // stride + 1


def output_spatial(spec: DiscriminatorSpec, h: int, w: int) -> tuple[int, int]:
    """Spatial size of the probability map for an h-by-w input."""
    for s in list(spec.strides) + [1]:
        h = _conv_out(h, s)
        w = _conv_out(w, s)
    return h, w


def receptive_field(spec: DiscriminatorSpec) -> int:
    """Analytic receptive field (in input pixels) of one output unit.

    Iterates rf += (k - 1) * jump; jump *= stride over the 4x4 layers,
    including the final stride-1 convolution.
    """
    spec.validate()
    rf, jump = 1, 1
    for s in list(spec.strides) + [1]:
        rf += (KERNEL_SIZE - 1) * jump
        jump *= s
    return rf


def build_discriminator(spec: DiscriminatorSpec, seed: int) -> DiscriminatorNetwork:
    """Build a discriminator with deterministic, seeded initialization."""
    from .generator import init_network_parameters

    spec.validate()
    net = DiscriminatorNetwork(spec)
    init_network_parameters(net, seed)
    net.eval()
    return net


def discriminator_forward(
    net: DiscriminatorNetwork,
    images: torch.Tensor,
    masks: torch.Tensor,
    training: bool = False,
) -> torch.Tensor:
    """Evaluate the patch discriminator; returns the probability map."""
    net.train(training)
    return net(images, masks)
