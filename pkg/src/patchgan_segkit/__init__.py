"""patchgan-segkit: adversarial segmentation training with a U-Net generator,
a patch-wise discriminator, Tversky-family losses, and a scratch-vs-transfer
experiment matrix."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    DatasetManifest,
    SampleRecord,
    SynthConfig,
    generate_synthetic,
    subset_manifest,
)
from .discriminator import (
    DiscriminatorNetwork,
    DiscriminatorSpec,
    build_discriminator,
    discriminator_forward,
    receptive_field,
)
from .errors import (
    ConfigurationError,
    DataError,
    SegkitError,
    ShapeError,
    TrainingError,
)
from .experiments import ExperimentPlan, RunResult, run_experiment
from .generator import (
    GeneratorNetwork,
    GeneratorSpec,
    build_generator,
    generator_forward,
)
from .losses import (
    ConfusionSums,
    TverskyParams,
    confusion_sums,
    discriminator_loss,
    focal_tversky_loss,
    generator_loss,
    tversky_index,
)
from .report import build_report
from .trainer import EpochMetrics, TrainConfig, evaluate, lr_at_epoch, train
from .transfer import TransferReport, transfer_weights

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "ConfigurationError",
    "ConfusionSums",
    "DataError",
    "DatasetManifest",
    "DiscriminatorNetwork",
    "DiscriminatorSpec",
    "EpochMetrics",
    "ExperimentPlan",
    "GeneratorNetwork",
    "GeneratorSpec",
    "RunResult",
    "SampleRecord",
    "SegkitError",
    "ShapeError",
    "SynthConfig",
    "TrainConfig",
    "TrainingError",
    "TransferReport",
    "TverskyParams",
    "build_discriminator",
    "build_generator",
    "build_report",
    "confusion_sums",
    "discriminator_forward",
    "discriminator_loss",
    "evaluate",
    "focal_tversky_loss",
    "generate_synthetic",
    "generator_forward",
    "generator_loss",
    "load_checkpoint",
    "lr_at_epoch",
    "receptive_field",
    "run_experiment",
    "save_checkpoint",
    "subset_manifest",
    "train",
    "transfer_weights",
    "tversky_index",
]
