"""Adversarial training loop, validation metrics, and checkpointing.

Per batch the discriminator is updated first on the mean of real-vs-1 and
fake-vs-0 patch BCE (generator outputs detached), then the generator on
``lambda_adv * BCE(D(x, G(x)), 1) + lambda_seg * FTL(G(x), mask)``. Learning
rates decay by a fixed factor every ``decay_interval`` epochs. Validation
metrics are computed after every epoch with dropout off and batch norm in
inference mode, accumulating confusion sums over the whole test split so the
result does not depend on the evaluation batch size.

With ``lambda_adv = 0`` and a fixed seed, training is a deterministic
function of (manifest, config): initialization draws from seeded local
generators, batch order is reshuffled per epoch from (seed, epoch), and
dropout draws from the global torch generator seeded at the start of the
run.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .checkpoint import (
    Checkpoint,
    GENERATOR_PREFIX,
    DISCRIMINATOR_PREFIX,
    load_network_state,
    save_checkpoint,
)
from .data.records import DatasetManifest, SampleRecord
from .discriminator import DiscriminatorSpec, build_discriminator
from .errors import ConfigurationError, DataError
from .generator import GeneratorSpec, build_generator
from .losses import (
    TverskyParams,
    discriminator_loss_logits,
    focal_tversky_loss,
    generator_loss_logits,
    tversky_index_from_sums,
)

log = logging.getLogger(__name__)

# GAN-conventional Adam moments; recorded in every checkpoint's train config.
ADAM_BETAS = (0.5, 0.999)

METRICS_FIELDS = (
    "epoch",
    "g_loss_total",
    "g_loss_adv",
    "g_loss_seg",
    "d_loss",
    "val_ftl",
    "val_ti",
    "val_iou",
    "lr_g",
    "lr_d",
)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr_generator: float = 5e-4
    lr_discriminator: float = 1e-4
    decay_factor: float = 0.95
    decay_interval: int = 5
    loss_params: TverskyParams = field(default_factory=TverskyParams)
    seed: int = 0
    device_hint: str = "cpu"
    checkpoint_every: int = 0  # also write a checkpoint every k epochs; 0 = final only

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ConfigurationError(
                f"learning rates must be > 0, got {self.lr_generator} and "
                f"{self.lr_discriminator}"
            )
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigurationError(
                f"decay_factor must lie in (0, 1], got {self.decay_factor}"
            )
        if self.decay_interval < 1:
            raise ConfigurationError(
                f"decay_interval must be >= 1, got {self.decay_interval}"
            )
        if self.checkpoint_every < 0:
            raise ConfigurationError(
                f"checkpoint_every must be >= 0, got {self.checkpoint_every}"
            )
        self.loss_params.validate()


def train_config_to_dict(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["loss_params"] = dataclasses.asdict(config.loss_params)
    return d


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    loss = d.pop("loss_params", None) or {}
    return TrainConfig(loss_params=TverskyParams(**loss), **d)


@dataclass
class EpochMetrics:
    epoch: int
    g_loss_total: float
    g_loss_adv: float
    g_loss_seg: float
    d_loss: float
    val_ftl: float
    val_ti: float
    val_iou: float
    lr_g: float
    lr_d: float


def lr_at_epoch(initial: float, decay_factor: float, interval: int, epoch: int) -> float:
    """initial * decay_factor**floor(epoch / interval); epoch is 0-based."""
    if epoch < 0:
        raise ConfigurationError(f"epoch must be >= 0, got {epoch}")
    return initial * decay_factor ** (epoch // interval)


def resolve_device(hint: str) -> torch.device:
    if hint == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(hint)


def write_metrics_csv(path: str | Path, rows: Iterable[EpochMetrics]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_FIELDS)
        for row in rows:
            writer.writerow([repr(getattr(row, f)) for f in METRICS_FIELDS])


def read_metrics_csv(path: str | Path) -> list[EpochMetrics]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for raw in reader:
                rows.append(
                    EpochMetrics(
                        epoch=int(raw["epoch"]),
                        **{
                            f: float(raw[f])
                            for f in METRICS_FIELDS
                            if f != "epoch"
                        },
                    )
                )
            return rows
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"cannot read metrics file {path}: {exc}") from exc


def _load_batch(
    manifest: DatasetManifest,
    records: Sequence[SampleRecord],
    device: torch.device,
) -> tuple[torch.Tensor, torch.Tensor]:
    images, masks = [], []
    shape = None
    for record in records:
        image, mask = manifest.load_pair(record)
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise DataError(
                f"record {record.id}: image shape {image.shape} differs from "
                f"{shape}; a batch must be homogeneous"
            )
        images.append(image)
        masks.append(mask[None, :, :].astype(np.float32))
    x = torch.from_numpy(np.stack(images)).to(device)
    m = torch.from_numpy(np.stack(masks)).to(device)
    return x, m


def _batches(order: Sequence[int], batch_size: int) -> Iterable[list[int]]:
    for start in range(0, len(order), batch_size):
        yield list(order[start : start + batch_size])


class _SumAccumulator:
    """Float64 confusion sums over a whole split; soft for TI/FTL, hard
    (thresholded) for IoU and Dice."""

    def __init__(self, threshold: float):
        self.threshold = threshold
        self.tp = self.fn = self.fp = 0.0
        self.inter = self.union = 0.0
        self.pred_area = self.truth_area = 0.0

    def update(self, pred: torch.Tensor, truth: torch.Tensor) -> None:
        p = pred.double()
        g = truth.double()
        self.tp += float((p * g).sum())
        self.fn += float(((1.0 - p) * g).sum())
        self.fp += float((p * (1.0 - g)).sum())
        hard = (p >= self.threshold).double()
        self.inter += float((hard * g).sum())
        self.union += float(((hard + g) > 0).double().sum())
        self.pred_area += float(hard.sum())
        self.truth_area += float(g.sum())

    def soft(self, params: TverskyParams) -> tuple[float, float]:
        ti = float(tversky_index_from_sums(self.tp, self.fn, self.fp, params))
        ftl = max(0.0, 1.0 - ti) ** params.gamma
        return ftl, ti

    def iou(self) -> float:
        return self.inter / self.union if self.union > 0 else 1.0

    def dice(self) -> float:
        denom = self.pred_area + self.truth_area
        return 2.0 * self.inter / denom if denom > 0 else 1.0


def _validation_metrics(
    gen: torch.nn.Module,
    manifest: DatasetManifest,
    records: Sequence[SampleRecord],
    params: TverskyParams,
    batch_size: int,
    device: torch.device,
    threshold: float = 0.5,
) -> tuple[float, float, float]:
    acc = _SumAccumulator(threshold)
    gen.eval()
    with torch.no_grad():
        for idxs in _batches(range(len(records)), batch_size):
            x, m = _load_batch(manifest, [records[i] for i in idxs], device)
            acc.update(gen(x), m)
    ftl, ti = acc.soft(params)
    return ftl, ti, acc.iou()


def optimizer_state_numpy(
    optimizer: torch.optim.Optimizer, names: Sequence[str], prefix: str
) -> dict[str, np.ndarray]:
    """Flatten Adam state into named float32 arrays (persisted, not restored)."""
    out = {}
    params = optimizer.param_groups[0]["params"]
    for name, p in zip(names, params):
        state = optimizer.state.get(p, {})
        for key, value in state.items():
            arr = (
                value.detach().cpu().numpy()
                if torch.is_tensor(value)
                else np.asarray(value)
            )
            out[f"{prefix}.{name}.{key}"] = np.asarray(
                arr, dtype=np.float32, order="C"
            ).copy()
    return out


def train(
    manifest: DatasetManifest,
    config: TrainConfig,
    generator_spec: GeneratorSpec | None = None,
    discriminator_spec: DiscriminatorSpec | None = None,
    init: Checkpoint | None = None,
    out_dir: str | Path | None = None,
    batch_hook: Callable[[str, torch.nn.Module, torch.nn.Module], None] | None = None,
) -> tuple[Checkpoint, list[EpochMetrics]]:
    """Run the adversarial loop and return (final checkpoint, epoch metrics).

    When ``init`` is given its architecture is used and its parameter map is
    loaded before training (optimizer state always starts fresh). When
    ``out_dir`` is given, ``metrics.csv`` is rewritten after every epoch and
    the final checkpoint lands in ``out_dir/checkpoint``.
    """
    config.validate()
    manifest.validate()
    train_recs = manifest.train_records()
    if not train_recs:
        raise DataError(f"manifest {manifest.name!r}: train split is empty")
    test_recs = manifest.test_records()
    channels = manifest.channels

    if init is not None:
        gen_spec = init.generator_spec
        disc_spec = init.discriminator_spec
    else:
        gen_spec = generator_spec or GeneratorSpec(in_channels=channels)
        disc_spec = discriminator_spec or DiscriminatorSpec(image_channels=channels)
    if gen_spec.in_channels != channels:
        raise ConfigurationError(
            f"generator expects {gen_spec.in_channels} input channels but "
            f"manifest {manifest.name!r} has {channels}"
        )
    if disc_spec.image_channels != channels:
        raise ConfigurationError(
            f"discriminator expects {disc_spec.image_channels} image channels "
            f"but manifest {manifest.name!r} has {channels}"
        )

    device = resolve_device(config.device_hint)
    torch.manual_seed(config.seed)  # dropout stream
    gen = build_generator(gen_spec, seed=config.seed)
    disc = build_discriminator(disc_spec, seed=config.seed + 1)
    if init is not None:
        load_network_state(gen, init.parameters, GENERATOR_PREFIX)
        load_network_state(disc, init.parameters, DISCRIMINATOR_PREFIX)
    gen.to(device)
    disc.to(device)

    params = config.loss_params
    g_opt = torch.optim.Adam(gen.parameters(), lr=config.lr_generator, betas=ADAM_BETAS)
    d_opt = torch.optim.Adam(
        disc.parameters(), lr=config.lr_discriminator, betas=ADAM_BETAS
    )
    gen_names = [n for n, _ in gen.named_parameters()]
    disc_names = [n for n, _ in disc.named_parameters()]

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    provenance = f"{manifest.name}:{manifest.digest()}"

    def snapshot(epoch: int) -> Checkpoint:
        state = optimizer_state_numpy(g_opt, gen_names, "g")
        state.update(optimizer_state_numpy(d_opt, disc_names, "d"))
        return Checkpoint.from_networks(
            gen,
            disc,
            epoch=epoch,
            optimizer_state=state,
            train_config=config,
            provenance=provenance,
        )

    metrics: list[EpochMetrics] = []
    for epoch in range(config.epochs):
        lr_g = lr_at_epoch(
            config.lr_generator, config.decay_factor, config.decay_interval, epoch
        )
        lr_d = lr_at_epoch(
            config.lr_discriminator, config.decay_factor, config.decay_interval, epoch
        )
        for group in g_opt.param_groups:
            group["lr"] = lr_g
        for group in d_opt.param_groups:
            group["lr"] = lr_d

        order = np.random.default_rng([config.seed, epoch]).permutation(
            len(train_recs)
        )
        gen.train(True)
        disc.train(True)
        sums = {"total": 0.0, "adv": 0.0, "seg": 0.0, "d": 0.0}
        seen = 0
        for idxs in _batches(order.tolist(), config.batch_size):
            x, m = _load_batch(manifest, [train_recs[i] for i in idxs], device)
            n = x.shape[0]

            pred = gen(x)
            if batch_hook is not None:
                batch_hook("pre_discriminator_step", gen, disc)

            real_logits = disc.logits(x, m)
            fake_logits = disc.logits(x, pred.detach())
            d_loss = discriminator_loss_logits(real_logits, fake_logits)
            d_opt.zero_grad()
            d_loss.backward()
            d_opt.step()
            if batch_hook is not None:
                batch_hook("post_discriminator_step", gen, disc)

            if params.lambda_adv > 0:
                for p in disc.parameters():
                    p.requires_grad_(False)
                adv_logits = disc.logits(x, pred)
                g_total, parts = generator_loss_logits(pred, m, adv_logits, params)
                g_opt.zero_grad()
                g_total.backward()
                g_opt.step()
                for p in disc.parameters():
                    p.requires_grad_(True)
            else:
                seg = focal_tversky_loss(pred, m, params)
                g_total = params.lambda_seg * seg
                g_opt.zero_grad()
                g_total.backward()
                g_opt.step()
                with torch.no_grad():
                    # report-only: how the frozen fake logits score against "real"
                    adv = torch.nn.functional.binary_cross_entropy_with_logits(
                        fake_logits.detach(), torch.ones_like(fake_logits)
                    )
                parts = {"adv": adv, "seg": seg}
            if batch_hook is not None:
                batch_hook("post_generator_step", gen, disc)

            sums["total"] += float(g_total.detach()) * n
            sums["adv"] += float(parts["adv"].detach()) * n
            sums["seg"] += float(parts["seg"].detach()) * n
            sums["d"] += float(d_loss.detach()) * n
            seen += n

        if test_recs:
            val_ftl, val_ti, val_iou = _validation_metrics(
                gen, manifest, test_recs, params, config.batch_size, device
            )
        else:
            val_ftl = val_ti = val_iou = float("nan")

        row = EpochMetrics(
            epoch=epoch + 1,
            g_loss_total=sums["total"] / seen,
            g_loss_adv=sums["adv"] / seen,
            g_loss_seg=sums["seg"] / seen,
            d_loss=sums["d"] / seen,
            val_ftl=val_ftl,
            val_ti=val_ti,
            val_iou=val_iou,
            lr_g=lr_g,
            lr_d=lr_d,
        )
        metrics.append(row)
        log.info(
            "epoch %d/%d g_loss=%.4f d_loss=%.4f val_ftl=%.4f",
            epoch + 1,
            config.epochs,
            row.g_loss_total,
            row.d_loss,
            row.val_ftl,
        )

        if out_dir is not None:
            write_metrics_csv(out_dir / "metrics.csv", metrics)
            if (
                config.checkpoint_every
                and (epoch + 1) % config.checkpoint_every == 0
                and epoch + 1 < config.epochs
            ):
                save_checkpoint(
                    snapshot(epoch + 1), out_dir / f"checkpoint-epoch{epoch + 1:04d}"
                )

    final = snapshot(config.epochs)
    if out_dir is not None:
        save_checkpoint(final, out_dir / "checkpoint")
    return final, metrics


def metrics_from_predictions(
    triples: Iterable[tuple[str, torch.Tensor, torch.Tensor]],
    params: TverskyParams | None = None,
    threshold: float = 0.5,
) -> dict:
    """Aggregate metrics from (sample_id, soft prediction, binary truth).

    Soft metrics (FTL, TI) are computed from confusion sums pooled over the
    whole stream; IoU and Dice from masks thresholded at ``threshold``. A
    per-sample table with the same metrics is included.
    """
    params = params or TverskyParams()
    total = _SumAccumulator(threshold)
    per_sample = []
    for sample_id, pred, truth in triples:
        one = _SumAccumulator(threshold)
        one.update(pred, truth)
        total.update(pred, truth)
        ftl, ti = one.soft(params)
        per_sample.append(
            {
                "id": sample_id,
                "ftl": ftl,
                "ti": ti,
                "iou": one.iou(),
                "dice": one.dice(),
            }
        )
    if not per_sample:
        raise DataError("no samples to evaluate")
    ftl, ti = total.soft(params)
    return {
        "val_ftl": ftl,
        "val_ti": ti,
        "val_iou": total.iou(),
        "dice": total.dice(),
        "per_sample": per_sample,
    }


def evaluate(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    threshold: float = 0.5,
    batch_size: int = 16,
    device: str | torch.device | None = None,
) -> dict:
    """Run the checkpointed generator over the test split and score it."""
    manifest.validate()
    records = manifest.test_records()
    if not records:
        raise DataError(f"manifest {manifest.name!r}: test split is empty")
    if checkpoint.generator_spec.in_channels != manifest.channels:
        raise ConfigurationError(
            f"checkpoint generator expects {checkpoint.generator_spec.in_channels} "
            f"channels but manifest {manifest.name!r} has {manifest.channels}"
        )
    dev = torch.device(device) if device is not None else resolve_device(
        checkpoint.train_config.device_hint if checkpoint.train_config else "cpu"
    )
    gen, _ = checkpoint.build_networks(dev)
    gen.eval()
    params = (
        checkpoint.train_config.loss_params if checkpoint.train_config else None
    )

    def stream():
        with torch.no_grad():
            for idxs in _batches(range(len(records)), batch_size):
                batch = [records[i] for i in idxs]
                x, m = _load_batch(manifest, batch, dev)
                pred = gen(x)
                for record, p, g in zip(batch, pred, m):
                    yield record.id, p, g

    return metrics_from_predictions(stream(), params, threshold)
