"""Experiment matrix: scratch baselines vs transfer-initialized fine-tuning
across training fractions, plus the comparison report.

Roles: dataset A is the transfer target; B and C are pretraining sources
(possibly with a different channel count). The matrix consists of two
pretraining runs (scratch on the full B and C) and, for every (fraction,
seed), a scratch-A run plus two transfer runs initialized from the B and C
pretrains -- ``2 + len(fractions) * 3 * len(seeds)`` runs in total.

Runs are resumable: a run directory containing ``result.json`` is treated as
complete and skipped. Independent runs can execute in parallel worker
processes.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import (
    discriminator_spec_from_dict,
    generator_spec_from_dict,
    load_checkpoint,
    spec_to_dict,
)
from .data.records import DatasetManifest, SampleRecord
from .data.recipes import subset_manifest
from .discriminator import DiscriminatorSpec
from .errors import ConfigurationError, DataError, SegkitError, TrainingError
from .generator import GeneratorSpec
from .trainer import (
    TrainConfig,
    read_metrics_csv,
    train,
    train_config_from_dict,
    train_config_to_dict,
)
from .transfer import REPORT_FILE, transfer_weights

log = logging.getLogger(__name__)

CACHE_ENV_VAR = "PATCHGAN_SEGKIT_CACHE"

RESULT_FILE = "result.json"
DEFAULT_FRACTIONS = (0.10, 0.25, 0.50, 0.75, 1.00)

ROLE_A, ROLE_B, ROLE_C = "A", "B", "C"


@dataclass
class ExperimentPlan:
    """The five-family matrix over training fractions and replicate seeds."""

    dataset_a: str | Path
    dataset_b: str | Path
    dataset_c: str | Path
    train_config: TrainConfig = field(default_factory=TrainConfig)
    fractions: tuple[float, ...] = DEFAULT_FRACTIONS
    seeds: tuple[int, ...] = (0,)
    generator_spec: GeneratorSpec | None = None  # in_channels adapts per dataset
    discriminator_spec: DiscriminatorSpec | None = None

    def validate(self) -> None:
        paths = [str(self.dataset_a), str(self.dataset_b), str(self.dataset_c)]
        if len(set(paths)) != 3:
            raise ConfigurationError(
                f"dataset roles must be distinct directories, got {paths}"
            )
        if not self.fractions:
            raise ConfigurationError("fractions must be non-empty")
        for f in self.fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigurationError(f"fractions must lie in (0, 1], got {f}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        self.train_config.validate()

    def n_runs(self) -> int:
        return 2 + len(self.fractions) * 3 * len(self.seeds)


@dataclass
class RunResult:
    model_id: str
    final_val_ftl: float
    metrics_path: str  # relative to the runs directory
    checkpoint_path: str

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def scratch_model_id(role: str, fraction: float, seed: int) -> str:
    return f"scratch:{role}@{fraction:.2f}#seed{seed}"


def transfer_model_id(source_role: str, fraction: float, seed: int) -> str:
    return f"transfer:{source_role}→{ROLE_A}@{fraction:.2f}#seed{seed}"


def model_family(model_id: str) -> str:
    return model_id.split("@", 1)[0]


def parse_model_id(model_id: str) -> tuple[str, float, int]:
    """Split 'family@fraction#seedN' into (family, fraction, seed)."""
    try:
        family, rest = model_id.split("@", 1)
        frac_s, seed_s = rest.split("#seed", 1)
        return family, float(frac_s), int(seed_s)
    except ValueError as exc:
        raise DataError(f"unparseable model id {model_id!r}") from exc


def cache_root() -> Path | None:
    """Optional relocation of intermediate tensors/manifests via env var."""
    value = os.environ.get(CACHE_ENV_VAR)
    return Path(value) if value else None


def _materialize_subset(
    manifest: DatasetManifest, fraction: float, seed: int, model_id: str
) -> DatasetManifest:
    subset = subset_manifest(manifest, fraction, seed)
    cache = cache_root()
    if cache is None:
        return subset
    # Persist the subset listing with absolute tensor paths so the cached
    # manifest stands alone.
    records = [
        SampleRecord(
            id=r.id,
            image_path=str(manifest.resolve(r.image_path)),
            mask_path=str(manifest.resolve(r.mask_path)),
            height=r.height,
            width=r.width,
            channels=r.channels,
            split=r.split,
            source_id=r.source_id,
        )
        for r in subset.records
    ]
    cached = DatasetManifest(
        name=subset.name,
        records=records,
        channel_semantics=list(subset.channel_semantics),
    )
    target = cache / "subsets" / model_id
    cached.save(target)
    return cached


def _load_result(run_dir: Path) -> RunResult | None:
    path = run_dir / RESULT_FILE
    if not path.is_file():
        return None
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
        return RunResult(**obj)
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataError(f"corrupt run result {path}: {exc}") from exc


def _adapted_specs(
    desc: dict, channels: int
) -> tuple[GeneratorSpec, DiscriminatorSpec]:
    gen_spec = (
        generator_spec_from_dict(desc["generator_spec"])
        if desc.get("generator_spec")
        else GeneratorSpec()
    )
    disc_spec = (
        discriminator_spec_from_dict(desc["discriminator_spec"])
        if desc.get("discriminator_spec")
        else DiscriminatorSpec()
    )
    gen_spec = dataclasses.replace(gen_spec, in_channels=channels)
    disc_spec = dataclasses.replace(disc_spec, image_channels=channels)
    return gen_spec, disc_spec


def _execute_run(desc: dict) -> dict:
    """Worker body for one run; returns the RunResult as a dict."""
    runs_root = Path(desc["runs_root"])
    run_dir = runs_root / desc["model_id"]
    existing = _load_result(run_dir)
    if existing is not None:
        return existing.to_dict()

    model_id = desc["model_id"]
    try:
        manifest = DatasetManifest.load(desc["dataset"])
        if desc["fraction"] < 1.0:
            manifest = _materialize_subset(
                manifest, desc["fraction"], desc["seed"], model_id
            )
        config = train_config_from_dict(desc["train_config"])
        config = dataclasses.replace(config, seed=desc["seed"])
        gen_spec, disc_spec = _adapted_specs(desc, manifest.channels)

        run_dir.mkdir(parents=True, exist_ok=True)
        init = None
        if desc.get("source_checkpoint"):
            source = load_checkpoint(desc["source_checkpoint"])
            init, report = transfer_weights(source, gen_spec, disc_spec, desc["seed"])
            report.save(run_dir / REPORT_FILE)

        _, metrics = train(
            manifest,
            config,
            generator_spec=gen_spec,
            discriminator_spec=disc_spec,
            init=init,
            out_dir=run_dir,
        )
    except SegkitError as exc:
        raise TrainingError(f"run {model_id}: {exc}") from exc

    result = RunResult(
        model_id=model_id,
        final_val_ftl=metrics[-1].val_ftl,
        metrics_path=f"{model_id}/metrics.csv",
        checkpoint_path=f"{model_id}/checkpoint",
    )
    (run_dir / RESULT_FILE).write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return result.to_dict()


def _plan_descriptors(plan: ExperimentPlan, runs_root: Path) -> tuple[list, list]:
    """Build (pretrain, matrix) run descriptors; matrix descriptors refer to
    the pretrain checkpoints by path."""
    config = train_config_to_dict(plan.train_config)
    gen_spec = spec_to_dict(plan.generator_spec) if plan.generator_spec else None
    disc_spec = (
        spec_to_dict(plan.discriminator_spec) if plan.discriminator_spec else None
    )
    base = {
        "runs_root": str(runs_root),
        "train_config": config,
        "generator_spec": gen_spec,
        "discriminator_spec": disc_spec,
        "source_checkpoint": None,
    }
    seed0 = plan.seeds[0]
    pretrains = []
    for role, dataset in ((ROLE_B, plan.dataset_b), (ROLE_C, plan.dataset_c)):
        pretrains.append(
            {
                **base,
                "model_id": scratch_model_id(role, 1.0, seed0),
                "dataset": str(dataset),
                "fraction": 1.0,
                "seed": seed0,
            }
        )
    matrix = []
    for fraction in plan.fractions:
        for seed in plan.seeds:
            matrix.append(
                {
                    **base,
                    "model_id": scratch_model_id(ROLE_A, fraction, seed),
                    "dataset": str(plan.dataset_a),
                    "fraction": fraction,
                    "seed": seed,
                }
            )
            for pre, role in zip(pretrains, (ROLE_B, ROLE_C)):
                matrix.append(
                    {
                        **base,
                        "model_id": transfer_model_id(role, fraction, seed),
                        "dataset": str(plan.dataset_a),
                        "fraction": fraction,
                        "seed": seed,
                        "source_checkpoint": str(
                            runs_root / pre["model_id"] / "checkpoint"
                        ),
                    }
                )
    return pretrains, matrix


def _run_stage(descriptors: list[dict], jobs: int) -> list[RunResult]:
    results = []
    pending = []
    for desc in descriptors:
        existing = _load_result(Path(desc["runs_root"]) / desc["model_id"])
        if existing is not None:
            log.info("skipping completed run %s", desc["model_id"])
            results.append((desc["model_id"], existing))
        else:
            pending.append(desc)
    if pending:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for desc, out in zip(pending, pool.map(_execute_run, pending)):
                    results.append((desc["model_id"], RunResult(**out)))
        else:
            for desc in pending:
                log.info("running %s", desc["model_id"])
                results.append((desc["model_id"], RunResult(**_execute_run(desc))))
    order = {d["model_id"]: i for i, d in enumerate(descriptors)}
    results.sort(key=lambda pair: order[pair[0]])
    return [r for _, r in results]


def plan_model_ids(plan: ExperimentPlan) -> list[str]:
    """The model ids the plan would execute, in execution order."""
    plan.validate()
    pre, matrix = _plan_descriptors(plan, Path("."))
    return [d["model_id"] for d in pre + matrix]


def run_experiment(
    plan: ExperimentPlan, out_dir: str | Path, jobs: int = 1
) -> list[RunResult]:
    """Execute the full matrix under ``out_dir`` (one directory per run)."""
    plan.validate()
    runs_root = Path(out_dir)
    runs_root.mkdir(parents=True, exist_ok=True)
    pretrains, matrix = _plan_descriptors(plan, runs_root)
    results = _run_stage(pretrains, min(jobs, len(pretrains)))
    results += _run_stage(matrix, jobs)
    index = [r.to_dict() for r in results]
    (runs_root / "results.json").write_text(
        json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return results


def load_results(runs_root: str | Path) -> list[RunResult]:
    """Collect every completed run under a runs directory."""
    runs_root = Path(runs_root)
    results = []
    for result_file in sorted(runs_root.glob(f"*/{RESULT_FILE}")):
        loaded = _load_result(result_file.parent)
        if loaded is not None:
            results.append(loaded)
    if not results:
        raise DataError(f"no completed runs found under {runs_root}")
    return results
