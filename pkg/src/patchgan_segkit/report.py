"""Comparison artifacts for a completed experiment matrix.

Produces ``loss_comparison.csv`` (per-seed rows plus per-family means),
a line plot of mean final validation loss vs training fraction, optional
side-by-side mask grids on validation samples, and ``report.json`` recording
for each transfer family the smallest fraction whose mean loss already
matches the scratch family's full-data loss.

CSV and JSON outputs are pure functions of the run results and are
byte-identical across re-runs; plots are not covered by that guarantee.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .data.records import DatasetManifest
from .errors import DataError
from .experiments import (
    ROLE_A,
    RunResult,
    model_family,
    parse_model_id,
)
from .trainer import read_metrics_csv

log = logging.getLogger(__name__)

CSV_FILE = "loss_comparison.csv"
PLOT_FILE = "loss_comparison.png"
REPORT_FILE = "report.json"

SCRATCH_FAMILY = f"scratch:{ROLE_A}"


def _is_target_family(family: str) -> bool:
    return family == SCRATCH_FAMILY or family.endswith(f"→{ROLE_A}")


def _check_consistency(result: RunResult, runs_root: Path) -> None:
    rows = read_metrics_csv(runs_root / result.metrics_path)
    if not rows:
        raise DataError(f"{result.model_id}: metrics file is empty")
    last = rows[-1].val_ftl
    if not np.isclose(last, result.final_val_ftl, rtol=0, atol=1e-12):
        raise DataError(
            f"{result.model_id}: result final_val_ftl {result.final_val_ftl!r} "
            f"does not match last-epoch val_ftl {last!r}"
        )


def _family_table(
    results: list[RunResult],
) -> dict[str, dict[float, dict[int, float]]]:
    """family -> fraction -> seed -> final loss, target families only."""
    table: dict[str, dict[float, dict[int, float]]] = defaultdict(
        lambda: defaultdict(dict)
    )
    for result in results:
        family, fraction, seed = parse_model_id(result.model_id)
        if _is_target_family(family):
            table[family][fraction][seed] = result.final_val_ftl
    return {f: dict(by_frac) for f, by_frac in table.items()}


def _write_csv(path: Path, table: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_family", "fraction", "seed", "final_val_ftl"])
        for family in sorted(table):
            for fraction in sorted(table[family]):
                for seed in sorted(table[family][fraction]):
                    writer.writerow(
                        [
                            family,
                            repr(fraction),
                            seed,
                            repr(table[family][fraction][seed]),
                        ]
                    )
        for family in sorted(table):
            for fraction in sorted(table[family]):
                values = list(table[family][fraction].values())
                writer.writerow(
                    [family, repr(fraction), "mean", repr(float(np.mean(values)))]
                )


def _means(table: dict) -> dict[str, dict[float, float]]:
    return {
        family: {
            fraction: float(np.mean(list(seeds.values())))
            for fraction, seeds in by_frac.items()
        }
        for family, by_frac in table.items()
    }


def matched_at_fraction(
    means: dict[str, dict[float, float]]
) -> tuple[float | None, dict[str, float | None]]:
    """Smallest fraction at which each transfer family's mean loss is at or
    below the scratch family's full-data mean loss."""
    scratch = means.get(SCRATCH_FAMILY, {})
    scratch_full = scratch.get(1.0) if scratch else None
    if scratch_full is None and scratch:
        scratch_full = scratch[max(scratch)]
    matches: dict[str, float | None] = {}
    for family, by_frac in means.items():
        if family == SCRATCH_FAMILY:
            continue
        matched = None
        if scratch_full is not None:
            for fraction in sorted(by_frac):
                if by_frac[fraction] <= scratch_full:
                    matched = fraction
                    break
        matches[family] = matched
    return scratch_full, matches


def _plot(path: Path, means: dict) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for family in sorted(means):
        fractions = sorted(means[family])
        ax.plot(
            fractions,
            [means[family][f] for f in fractions],
            marker="o",
            label=family,
        )
    ax.set_xlabel("training fraction")
    ax.set_ylabel("mean final validation FTL")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _composite_rgb(image: np.ndarray, semantics: list[str]) -> np.ndarray:
    """Map a (C, H, W) image to an (H, W, 3) display composite."""
    names = [s.lower() for s in semantics] if semantics else []
    if all(n in names for n in ("red", "green", "blue")):
        idx = [names.index("red"), names.index("green"), names.index("blue")]
    else:
        idx = list(range(min(3, image.shape[0])))
        while len(idx) < 3:
            idx.append(idx[-1])
    return np.clip(image[idx].transpose(1, 2, 0), 0.0, 1.0)


def _mask_grids(
    out_dir: Path,
    table: dict,
    results: list[RunResult],
    runs_root: Path,
    dataset_a: DatasetManifest,
    n_samples: int,
) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import torch

    # One representative run per family: highest fraction, lowest seed.
    by_id = {r.model_id: r for r in results}
    reps = {}
    for family in sorted(table):
        fraction = max(table[family])
        seed = min(table[family][fraction])
        suffix = f"@{fraction:.2f}#seed{seed}"
        reps[family] = by_id[family + suffix]

    generators = {}
    for family, result in reps.items():
        ckpt = load_checkpoint(runs_root / result.checkpoint_path)
        gen, _ = ckpt.build_networks("cpu")
        gen.eval()
        generators[family] = gen

    records = dataset_a.test_records()[:n_samples]
    paths = []
    for record in records:
        image, mask = dataset_a.load_pair(record)
        x = torch.from_numpy(image[None])
        columns = [
            ("input", _composite_rgb(image, dataset_a.channel_semantics)),
            ("truth", mask.astype(float)),
        ]
        with torch.no_grad():
            for family in sorted(generators):
                pred = generators[family](x)[0, 0].numpy()
                columns.append((family, pred))
        fig, axes = plt.subplots(
            1, len(columns), figsize=(2.2 * len(columns), 2.6)
        )
        for ax, (title, panel) in zip(axes, columns):
            if panel.ndim == 3:
                ax.imshow(panel)
            else:
                ax.imshow(panel, cmap="gray", vmin=0.0, vmax=1.0)
            ax.set_title(title, fontsize=7)
            ax.axis("off")
        fig.tight_layout()
        path = out_dir / f"masks_{record.id}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def build_report(
    results: list[RunResult],
    out_dir: str | Path,
    runs_root: str | Path,
    dataset_a: DatasetManifest | None = None,
    mask_samples: int = 4,
) -> dict:
    """Emit the report bundle and return the report.json payload."""
    if not results:
        raise DataError("no run results to report on")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs_root = Path(runs_root)

    for result in results:
        _check_consistency(result, runs_root)

    table = _family_table(results)
    if not table:
        raise DataError("no target-family runs among the results")
    means = _means(table)

    _write_csv(out_dir / CSV_FILE, table)
    _plot(out_dir / PLOT_FILE, means)

    scratch_full, matches = matched_at_fraction(means)
    payload = {
        "scratch_family": SCRATCH_FAMILY,
        "scratch_full_mean_final_val_ftl": scratch_full,
        "families": {
            family: {repr(f): means[family][f] for f in sorted(means[family])}
            for family in sorted(means)
        },
        "matched_at_fraction": matches,
    }
    (out_dir / REPORT_FILE).write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )

    if dataset_a is not None:
        try:
            _mask_grids(out_dir, table, results, runs_root, dataset_a, mask_samples)
        except DataError as exc:
            log.warning("skipping mask grids: %s", exc)
    return payload
