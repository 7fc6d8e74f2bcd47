"""Report bundle: CSV determinism, match-fraction logic, and mask grids."""

import json

import pytest

from conftest import make_dataset, tiny_train_config
from patchgan_segkit.data.records import DatasetManifest
from patchgan_segkit.errors import DataError
from patchgan_segkit.experiments import RunResult
from patchgan_segkit.report import build_report, matched_at_fraction
from patchgan_segkit.trainer import EpochMetrics, write_metrics_csv


def fake_run(runs_root, model_id, losses):
    """Materialize a run directory with a metrics history ending in
    losses[-1] and a matching result.json."""
    run_dir = runs_root / model_id
    run_dir.mkdir(parents=True, exist_ok=True)
    rows = [
        EpochMetrics(i + 1, 1.0, 0.5, 0.5, 0.7, v, 1 - v, 1 - v, 5e-4, 1e-4)
        for i, v in enumerate(losses)
    ]
    write_metrics_csv(run_dir / "metrics.csv", rows)
    result = RunResult(
        model_id=model_id,
        final_val_ftl=losses[-1],
        metrics_path=f"{model_id}/metrics.csv",
        checkpoint_path=f"{model_id}/checkpoint",
    )
    (run_dir / "result.json").write_text(json.dumps(result.to_dict()))
    return result


def synthetic_results(runs_root):
    spec = {
        "scratch:A": {0.5: 0.40, 1.0: 0.30},
        "transfer:B→A": {0.5: 0.28, 1.0: 0.25},
        "transfer:C→A": {0.5: 0.35, 1.0: 0.31},
        "scratch:B": {1.0: 0.50},  # pretrain, ignored by the comparison
    }
    results = []
    for family, by_frac in spec.items():
        for fraction, loss in by_frac.items():
            model_id = f"{family}@{fraction:.2f}#seed7"
            results.append(fake_run(runs_root, model_id, [loss + 0.1, loss]))
    return results


def test_matched_at_fraction_logic():
    means = {
        "scratch:A": {0.5: 0.40, 1.0: 0.30},
        "transfer:B→A": {0.5: 0.28, 1.0: 0.25},
        "transfer:C→A": {0.5: 0.35, 1.0: 0.31},
    }
    scratch_full, matches = matched_at_fraction(means)
    assert scratch_full == 0.30
    assert matches == {"transfer:B→A": 0.5, "transfer:C→A": None}


def test_matched_at_fraction_flat_series():
    means = {
        "scratch:A": {0.25: 0.3, 1.0: 0.3},
        "transfer:B→A": {0.25: 0.3, 0.5: 0.3, 1.0: 0.3},
    }
    _, matches = matched_at_fraction(means)
    assert matches["transfer:B→A"] == 0.25  # smallest fraction wins


def test_build_report_bundle(tmp_path):
    runs = tmp_path / "runs"
    results = synthetic_results(runs)
    out = tmp_path / "report"
    payload = build_report(results, out, runs_root=runs)
    assert payload["scratch_full_mean_final_val_ftl"] == 0.30
    assert payload["matched_at_fraction"] == {
        "transfer:B→A": 0.5,
        "transfer:C→A": None,
    }
    assert (out / "loss_comparison.png").is_file()

    csv_lines = (out / "loss_comparison.csv").read_text().splitlines()
    assert csv_lines[0] == "model_family,fraction,seed,final_val_ftl"
    # 6 per-seed rows + 6 mean rows for the three target families
    assert len(csv_lines) == 13
    assert sum(1 for line in csv_lines if line.endswith(",mean," + repr(0.30))) == 1
    assert not any(line.startswith("scratch:B") for line in csv_lines)

    report = json.loads((out / "report.json").read_text())
    assert report["families"]["scratch:A"] == {"0.5": 0.40, "1.0": 0.30}


def test_report_is_byte_deterministic(tmp_path):
    runs = tmp_path / "runs"
    results = synthetic_results(runs)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    build_report(results, out1, runs_root=runs)
    build_report(list(reversed(results)), out2, runs_root=runs)
    for name in ("loss_comparison.csv", "report.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_report_detects_inconsistent_results(tmp_path):
    runs = tmp_path / "runs"
    result = fake_run(runs, "scratch:A@1.00#seed7", [0.5, 0.4])
    result.final_val_ftl = 0.123
    with pytest.raises(DataError, match="does not match"):
        build_report([result], tmp_path / "r", runs_root=runs)


def test_mask_grids_from_real_runs(tmp_path):
    # Train one tiny real run per family so checkpoints exist for the grids.
    from conftest import tiny_disc_spec, tiny_gen_spec
    from patchgan_segkit.trainer import train

    data = make_dataset(tmp_path, "a", n=4, channels=4, n_test=2)
    runs = tmp_path / "runs"
    results = []
    for family in ("scratch:A", "transfer:B→A"):
        model_id = f"{family}@1.00#seed7"
        run_dir = runs / model_id
        ckpt, metrics = train(
            data,
            tiny_train_config(epochs=1, batch_size=4),
            tiny_gen_spec(in_channels=4),
            tiny_disc_spec(image_channels=4),
            out_dir=run_dir,
        )
        results.append(
            fake_run(runs, model_id, [m.val_ftl for m in metrics])
        )
    out = tmp_path / "report"
    build_report(results, out, runs_root=runs, dataset_a=data, mask_samples=2)
    grids = sorted(p.name for p in out.glob("masks_*.png"))
    assert len(grids) == 2
