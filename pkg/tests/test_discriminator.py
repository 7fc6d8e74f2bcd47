"""Patch-discriminator geometry: output map size, receptive field, locality."""

import pytest
import torch

from patchgan_segkit.discriminator import (
    DiscriminatorSpec,
    build_discriminator,
    discriminator_forward,
    output_spatial,
    receptive_field,
)
from patchgan_segkit.errors import ConfigurationError, ShapeError


def slim_spec(image_channels=3, strides=(2, 2, 2, 1)):
    return DiscriminatorSpec(
        image_channels=image_channels,
        layer_filters=tuple(4 for _ in strides),
        strides=strides,
    )


def test_default_spec_output_is_30x30():
    net = build_discriminator(DiscriminatorSpec(image_channels=4), seed=0)
    with torch.no_grad():
        out = net(
            torch.rand(1, 4, 256, 256), torch.randint(0, 2, (1, 1, 256, 256)).float()
        )
    assert out.shape == (1, 1, 30, 30)
    assert float(out.min()) > 0.0 and float(out.max()) < 1.0


def test_output_shape_batch_and_channels():
    net = build_discriminator(slim_spec(image_channels=3), seed=0)
    out = discriminator_forward(
        net, torch.rand(8, 3, 256, 256), torch.randint(0, 2, (8, 1, 256, 256)).float()
    )
    assert out.shape == (8, 1, 30, 30)
    net4 = build_discriminator(slim_spec(image_channels=4), seed=0)
    out4 = net4(torch.rand(1, 4, 256, 256), torch.zeros(1, 1, 256, 256))
    assert out4.shape == (1, 1, 30, 30)


def test_output_side_is_s_over_8_minus_2():
    # independent per-layer walk: k=4, p=1 -> s2 halves, s1 subtracts one
    def oracle(side):
        for stride in (2, 2, 2, 1, 1):
            side = (side + 2 - 4) // stride + 1
        return side

    assert oracle(256) == 30 and oracle(512) == 62
    spec = slim_spec()
    for side in (256, 512):
        assert output_spatial(spec, side, side) == (side // 8 - 2, side // 8 - 2)
    net = build_discriminator(spec, seed=0)
    out = net(torch.rand(1, 3, 512, 512), torch.zeros(1, 1, 512, 512))
    assert out.shape == (1, 1, 62, 62)


def test_receptive_field_values():
    assert receptive_field(DiscriminatorSpec()) == 70
    # single 4x4 stride-1 convolution: empty stack, final conv only
    assert receptive_field(slim_spec(strides=())) == 4
    # hand iteration for two stride-2 layers plus the final stride-1 conv:
    # rf 1 -> 4 (jump 2) -> 10 (jump 4) -> 22
    assert receptive_field(slim_spec(strides=(2, 2))) == 22


def test_shape_errors():
    net = build_discriminator(slim_spec(image_channels=3), seed=0)
    with pytest.raises(ShapeError, match="spatial"):
        net(torch.rand(8, 3, 256, 256), torch.zeros(8, 1, 128, 128))
    with pytest.raises(ShapeError, match="image channels"):
        net(torch.rand(1, 4, 256, 256), torch.zeros(1, 1, 256, 256))
    with pytest.raises(ShapeError, match="mask channels"):
        net(torch.rand(1, 3, 256, 256), torch.zeros(1, 2, 256, 256))
    with pytest.raises(ShapeError, match="too small"):
        net(torch.rand(1, 3, 8, 8), torch.zeros(1, 1, 8, 8))


def test_build_is_deterministic():
    a = build_discriminator(slim_spec(), seed=9)
    b = build_discriminator(slim_spec(), seed=9)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)


def input_window(unit: int, strides, size: int) -> tuple[int, int]:
    """Interval-propagated input range feeding one output coordinate."""
    lo = hi = unit
    for s in reversed(list(strides) + [1]):
        lo = lo * s - 1
        hi = hi * s - 1 + 3
    return max(lo, 0), min(hi, size - 1)


def test_patch_locality():
    spec = slim_spec(image_channels=3)
    net = build_discriminator(spec, seed=3)
    net.eval()
    side = 128
    torch.manual_seed(0)
    images = torch.rand(1, 3, side, side)
    masks = torch.randint(0, 2, (1, 1, side, side)).float()
    with torch.no_grad():
        base = net(images, masks)
        poked = images.clone()
        pi, pj = 64, 40
        poked[0, :, pi, pj] += 0.5
        changed = (net(poked, masks) != base)[0, 0]
    assert bool(changed.any())
    rf = receptive_field(spec)
    units = changed.nonzero().tolist()
    for u, v in units:
        lo_u, hi_u = input_window(u, spec.strides, side)
        lo_v, hi_v = input_window(v, spec.strides, side)
        assert lo_u <= pi <= hi_u and lo_v <= pj <= hi_v
        assert hi_u - lo_u + 1 <= rf and hi_v - lo_v + 1 <= rf


def test_invalid_specs():
    with pytest.raises(ConfigurationError, match="equal length"):
        DiscriminatorSpec(layer_filters=(8, 8), strides=(2,)).validate()
    with pytest.raises(ConfigurationError, match="> 0"):
        DiscriminatorSpec(layer_filters=(0,), strides=(2,)).validate()
    with pytest.raises(ConfigurationError, match="strides"):
        DiscriminatorSpec(layer_filters=(8,), strides=(0,)).validate()
    with pytest.raises(ConfigurationError, match="channels"):
        DiscriminatorSpec(image_channels=0).validate()
