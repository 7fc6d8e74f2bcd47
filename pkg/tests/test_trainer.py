"""Training loop bookkeeping, schedule, determinism, and evaluation metrics."""

import math

import numpy as np
import pytest
import torch

from conftest import make_dataset, tiny_disc_spec, tiny_gen_spec, tiny_train_config
from patchgan_segkit.checkpoint import load_checkpoint, save_checkpoint
from patchgan_segkit.errors import ConfigurationError, DataError
from patchgan_segkit.losses import TverskyParams
from patchgan_segkit.trainer import (
    EpochMetrics,
    METRICS_FIELDS,
    lr_at_epoch,
    metrics_from_predictions,
    read_metrics_csv,
    train,
    evaluate,
    write_metrics_csv,
)

# ---------------------------------------------------------------------------
# learning-rate schedule


def test_lr_at_epoch_values():
    assert lr_at_epoch(5e-4, 0.95, 5, 0) == pytest.approx(5e-4, abs=1e-12)
    assert lr_at_epoch(5e-4, 0.95, 5, 5) == pytest.approx(4.75e-4, abs=1e-12)
    assert lr_at_epoch(5e-4, 0.95, 5, 50) == pytest.approx(
        5e-4 * 0.95**10, abs=1e-12
    )


def test_lr_schedule_is_piecewise_constant():
    values = [lr_at_epoch(1e-3, 0.9, 4, e) for e in range(24)]
    for e in range(24):
        if e % 4 != 0:
            assert values[e] == values[e - 1]
        elif e > 0:
            assert values[e] == pytest.approx(values[e - 1] * 0.9, rel=1e-15)


# ---------------------------------------------------------------------------
# the loop


def test_train_bookkeeping(tmp_path):
    data = make_dataset(tmp_path, "d", n=64, n_test=4)
    config = tiny_train_config(epochs=2, batch_size=8)
    ckpt, metrics = train(data, config, tiny_gen_spec(), tiny_disc_spec())
    assert len(metrics) == 2
    assert ckpt.epoch == 2
    # 64 samples / batch 8 * 2 epochs = 16 optimizer steps for both networks
    steps = {
        float(np.asarray(v).reshape(-1)[0])
        for k, v in ckpt.optimizer_state.items()
        if k.endswith(".step")
    }
    assert steps == {16.0}
    for row in metrics:
        assert 0.0 <= row.val_ftl < 1.0
        assert 0.0 <= row.val_ti <= 1.0
        assert 0.0 <= row.val_iou <= 1.0
    assert metrics[0].lr_g == pytest.approx(config.lr_generator)
    assert metrics[0].lr_d == pytest.approx(config.lr_discriminator)


def test_train_writes_outputs(tmp_path, small_dataset):
    out = tmp_path / "run"
    config = tiny_train_config(epochs=2, checkpoint_every=1)
    ckpt, metrics = train(
        small_dataset, config, tiny_gen_spec(), tiny_disc_spec(), out_dir=out
    )
    assert (out / "checkpoint" / "meta.json").is_file()
    assert (out / "checkpoint-epoch0001").is_dir()
    rows = read_metrics_csv(out / "metrics.csv")
    assert [r.epoch for r in rows] == [1, 2]
    assert rows[-1].val_ftl == pytest.approx(metrics[-1].val_ftl)
    loaded = load_checkpoint(out / "checkpoint")
    assert loaded.parameters_digest() == ckpt.parameters_digest()
    assert loaded.provenance == f"{small_dataset.name}:{small_dataset.digest()}"


def test_train_is_deterministic(small_dataset):
    config = tiny_train_config(epochs=2, loss_params=TverskyParams(lambda_adv=0.0))
    a, _ = train(small_dataset, config, tiny_gen_spec(), tiny_disc_spec())
    b, _ = train(small_dataset, config, tiny_gen_spec(), tiny_disc_spec())
    assert a.parameters_digest() == b.parameters_digest()
    for name in a.optimizer_state:
        assert a.optimizer_state[name].tobytes() == b.optimizer_state[name].tobytes()


def test_train_seed_changes_result(small_dataset):
    a, _ = train(small_dataset, tiny_train_config(), tiny_gen_spec(), tiny_disc_spec())
    b, _ = train(
        small_dataset, tiny_train_config(seed=6), tiny_gen_spec(), tiny_disc_spec()
    )
    assert a.parameters_digest() != b.parameters_digest()


def test_sub_steps_do_not_cross_networks(small_dataset):
    """The discriminator update must leave generator parameters untouched and
    vice versa, asserted via parameter digests between the sub-steps."""

    def digest(module):
        import hashlib

        h = hashlib.sha256()
        for _, p in module.named_parameters():
            h.update(p.detach().numpy().tobytes())
        return h.hexdigest()

    snapshots = []

    def hook(phase, gen, disc):
        snapshots.append((phase, digest(gen), digest(disc)))

    train(
        small_dataset,
        tiny_train_config(epochs=1),
        tiny_gen_spec(),
        tiny_disc_spec(),
        batch_hook=hook,
    )
    assert snapshots and len(snapshots) % 3 == 0
    for pre_d, post_d, post_g in zip(
        snapshots[::3], snapshots[1::3], snapshots[2::3]
    ):
        assert [pre_d[0], post_d[0], post_g[0]] == [
            "pre_discriminator_step",
            "post_discriminator_step",
            "post_generator_step",
        ]
        # discriminator step: its own parameters move, the generator's do not
        assert pre_d[1] == post_d[1]
        assert pre_d[2] != post_d[2]
        # generator step: its own parameters move, the discriminator's do not
        assert post_d[1] != post_g[1]
        assert post_d[2] == post_g[2]


def test_validation_invariant_to_batch_size(tmp_path):
    data = make_dataset(tmp_path, "d", n=8, n_test=6)
    config = tiny_train_config(epochs=1)
    ckpt, _ = train(data, config, tiny_gen_spec(), tiny_disc_spec())
    r1 = evaluate(ckpt, data, batch_size=1)
    r2 = evaluate(ckpt, data, batch_size=4)
    r3 = evaluate(ckpt, data, batch_size=6)
    for key in ("val_ftl", "val_ti", "val_iou", "dice"):
        assert r1[key] == pytest.approx(r2[key], rel=1e-6)
        assert r1[key] == pytest.approx(r3[key], rel=1e-6)


def test_train_errors(tmp_path, small_dataset):
    empty = make_dataset(tmp_path, "e", n=1, n_test=1)
    empty.records = [r for r in empty.records if r.split == "test"]
    with pytest.raises(DataError, match="train split is empty"):
        train(empty, tiny_train_config(), tiny_gen_spec(), tiny_disc_spec())
    with pytest.raises(ConfigurationError, match="channels"):
        train(small_dataset, tiny_train_config(), tiny_gen_spec(in_channels=4))
    with pytest.raises(ConfigurationError, match="epochs"):
        tiny_train_config(epochs=0).validate()
    with pytest.raises(ConfigurationError, match="decay_factor"):
        tiny_train_config(decay_factor=0.0).validate()
    with pytest.raises(ConfigurationError, match="learning rates"):
        tiny_train_config(lr_generator=0.0).validate()


# ---------------------------------------------------------------------------
# evaluation metrics


def test_identity_oracle_scores_perfectly():
    rng = np.random.default_rng(0)
    triples = []
    for i in range(5):
        truth = torch.from_numpy((rng.uniform(size=(8, 8)) > 0.5).astype(np.float64))
        triples.append((f"s{i}", truth.clone(), truth))
    result = metrics_from_predictions(triples)
    assert result["val_iou"] == pytest.approx(1.0)
    assert result["dice"] == pytest.approx(1.0)
    assert result["val_ftl"] == pytest.approx(0.0, abs=1e-4)
    assert all(row["iou"] == pytest.approx(1.0) for row in result["per_sample"])


def test_all_zero_prediction_has_zero_iou():
    truth = torch.ones(4, 4, dtype=torch.float64)
    result = metrics_from_predictions([("s", torch.zeros(4, 4), truth)])
    assert result["val_iou"] == 0.0
    assert result["dice"] == 0.0


def test_iou_hand_enumerated():
    # prediction covers the top half, truth the left half: 1 common pixel of
    # 3 total covered pixels on a 2x2 grid
    pred = torch.tensor([[1.0, 1.0], [0.0, 0.0]])
    truth = torch.tensor([[1.0, 0.0], [1.0, 0.0]])
    result = metrics_from_predictions([("s", pred, truth)])
    assert result["val_iou"] == pytest.approx(1.0 / 3.0)


def test_evaluate_with_trained_checkpoint(small_dataset):
    ckpt, metrics = train(
        small_dataset, tiny_train_config(), tiny_gen_spec(), tiny_disc_spec()
    )
    result = evaluate(ckpt, small_dataset)
    assert result["val_ftl"] == pytest.approx(metrics[-1].val_ftl, rel=1e-5)
    assert len(result["per_sample"]) == len(small_dataset.test_records())
    ids = {row["id"] for row in result["per_sample"]}
    assert ids == {r.id for r in small_dataset.test_records()}


def test_evaluate_requires_test_split(tmp_path):
    data = make_dataset(tmp_path, "d", n=4, n_test=1)
    ckpt, _ = train(data, tiny_train_config(), tiny_gen_spec(), tiny_disc_spec())
    data.records = [r for r in data.records if r.split == "train"]
    with pytest.raises(DataError, match="test split is empty"):
        evaluate(ckpt, data)


# ---------------------------------------------------------------------------
# metrics csv


def test_metrics_csv_roundtrip(tmp_path):
    rows = [
        EpochMetrics(1, 0.5, 0.25, 0.25, 0.7, 0.4, 0.6, 0.5, 5e-4, 1e-4),
        EpochMetrics(2, 0.4, 0.2, 0.2, 0.69, 0.35, 0.65, 0.55, 5e-4, 1e-4),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(METRICS_FIELDS)
    assert read_metrics_csv(path) == rows
    with pytest.raises(DataError):
        read_metrics_csv(tmp_path / "missing.csv")
