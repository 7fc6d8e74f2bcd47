import numpy as np
import pytest

from patchgan_segkit.data.synthetic import SynthConfig, generate_synthetic
from patchgan_segkit.discriminator import DiscriminatorSpec
from patchgan_segkit.generator import GeneratorSpec
from patchgan_segkit.losses import TverskyParams
from patchgan_segkit.trainer import TrainConfig


def tiny_gen_spec(in_channels=3, **kwargs):
    defaults = dict(
        in_channels=in_channels,
        depth=3,
        encoder_filters=(8, 16, 32),
        dropout_rate=0.0,
    )
    defaults.update(kwargs)
    return GeneratorSpec(**defaults)


def tiny_disc_spec(image_channels=3):
    return DiscriminatorSpec(
        image_channels=image_channels, layer_filters=(8, 16), strides=(2, 2)
    )


def tiny_train_config(**kwargs):
    defaults = dict(
        epochs=1,
        batch_size=8,
        seed=5,
        loss_params=TverskyParams(),
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


def make_dataset(tmp_path, name, n=16, channels=3, side=32, seed=1, n_test=4,
                 blob_count=(1, 3), blob_radius=(3, 8), noise=0.05):
    config = SynthConfig(
        n_samples=n,
        channels=channels,
        side=side,
        blob_count_range=blob_count,
        blob_radius_range=blob_radius,
        noise_sigma=noise,
        seed=seed,
        n_test=n_test,
    )
    return generate_synthetic(config, tmp_path / name)


@pytest.fixture
def small_dataset(tmp_path):
    return make_dataset(tmp_path, "data3")


@pytest.fixture
def small_dataset_4ch(tmp_path):
    return make_dataset(tmp_path, "data4", channels=4, seed=2)
