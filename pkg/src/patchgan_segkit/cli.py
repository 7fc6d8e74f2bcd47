"""Command-line entry point.

Subcommands: ``synth-data``, ``prepare-data``, ``train``, ``transfer``,
``evaluate``, ``experiment``, ``report``. Flags override config-file values;
the fully resolved configuration is echoed into every run directory. All log
lines go to stderr; machine-readable outputs go only to files.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 runtime/training error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, resolved_sections, write_resolved_config
from .data.records import DatasetManifest
from .data.recipes import iter_raw_pairs, preprocess_coco, preprocess_fc, preprocess_ff
from .data.synthetic import generate_synthetic
from .errors import ConfigurationError, DataError, SegkitError, ShapeError
from .experiments import CACHE_ENV_VAR, ExperimentPlan, load_results, run_experiment
from .report import build_report
from .trainer import evaluate, train
from .transfer import REPORT_FILE, transfer_weights

log = logging.getLogger("patchgan_segkit")


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; this toolkit reserves 2 for data
    errors, so remap to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 50)")
    p.add_argument("--batch-size", type=int, default=None, help="batch size (default 16)")
    p.add_argument("--seed", type=int, default=None, help="run seed (default 0)")
    p.add_argument(
        "--lr-generator", type=float, default=None, help="initial generator lr (default 5e-4)"
    )
    p.add_argument(
        "--lr-discriminator",
        type=float,
        default=None,
        help="initial discriminator lr (default 1e-4)",
    )
    p.add_argument(
        "--decay-factor", type=float, default=None, help="lr decay factor (default 0.95)"
    )
    p.add_argument(
        "--decay-interval",
        type=int,
        default=None,
        help="epochs between lr decays (default 5)",
    )
    p.add_argument(
        "--device", default=None, help="device hint: cpu, cuda or auto (default cpu)"
    )
    p.add_argument(
        "--checkpoint-every",
        type=int,
        default=None,
        help="also checkpoint every k epochs (default 0: final only)",
    )
    p.add_argument(
        "--lambda-adv",
        type=float,
        default=None,
        help="adversarial weight in the generator objective (default 1.0)",
    )
    p.add_argument(
        "--lambda-seg",
        type=float,
        default=None,
        help="segmentation (FTL) weight in the generator objective (default 1.0)",
    )


def _train_config_from_args(cfg, args):
    if args.lambda_adv is not None:
        cfg.loss["lambda_adv"] = args.lambda_adv
    if args.lambda_seg is not None:
        cfg.loss["lambda_seg"] = args.lambda_seg
    return cfg.train_config(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        lr_generator=args.lr_generator,
        lr_discriminator=args.lr_discriminator,
        decay_factor=args.decay_factor,
        decay_interval=args.decay_interval,
        device_hint=args.device,
        checkpoint_every=args.checkpoint_every,
    )


def _cmd_synth_data(args) -> int:
    cfg = load_config(args.config)
    synth = cfg.synth_config(
        n_samples=args.n,
        channels=args.channels,
        side=args.side,
        seed=args.seed,
        n_test=args.n_test,
        noise_sigma=args.noise_sigma,
        blob_count_range=tuple(args.blob_count) if args.blob_count else None,
        blob_radius_range=tuple(args.blob_radius) if args.blob_radius else None,
    )
    out = Path(args.out)
    manifest = generate_synthetic(synth, out)
    write_resolved_config(
        out / "resolved_config.toml", resolved_sections(synth_config=synth)
    )
    log.info(
        "wrote %d train / %d test samples to %s",
        len(manifest.train_records()),
        len(manifest.test_records()),
        out,
    )
    return 0


def _cmd_prepare_data(args) -> int:
    raw = DatasetManifest.load(args.input)
    pairs = iter_raw_pairs(raw)
    if args.recipe == "ff":
        manifest = preprocess_ff(pairs, args.out, seed=args.seed, name=args.name or "ff")
    elif args.recipe == "fc":
        manifest = preprocess_fc(pairs, args.out, seed=args.seed, name=args.name or "fc")
    else:
        if not args.class_name:
            raise ConfigurationError("--class-name is required for the coco recipe")
        classes_path = Path(args.input) / "classes.json"
        if not classes_path.is_file():
            raise DataError(
                f"the coco recipe needs a class map at {classes_path}"
            )
        classes = json.loads(classes_path.read_text(encoding="utf-8"))
        manifest = preprocess_coco(
            pairs, args.class_name, classes, args.out, name=args.name or "coco"
        )
    log.info(
        "recipe %s: %d train / %d test records -> %s",
        args.recipe,
        len(manifest.train_records()),
        len(manifest.test_records()),
        args.out,
    )
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    manifest = DatasetManifest.load(args.data)
    train_config = _train_config_from_args(cfg, args)
    init = load_checkpoint(args.init) if args.init else None
    if init is not None:
        gen_spec, disc_spec = init.generator_spec, init.discriminator_spec
    else:
        gen_spec = cfg.generator_spec(default_in_channels=manifest.channels)
        disc_spec = cfg.discriminator_spec(default_image_channels=manifest.channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(
        out / "resolved_config.toml",
        resolved_sections(
            generator_spec=gen_spec,
            discriminator_spec=disc_spec,
            train_config=train_config,
        ),
    )
    _, metrics = train(
        manifest,
        train_config,
        generator_spec=gen_spec,
        discriminator_spec=disc_spec,
        init=init,
        out_dir=out,
    )
    log.info("finished %d epochs; final val_ftl=%.4f", len(metrics), metrics[-1].val_ftl)
    return 0


def _cmd_transfer(args) -> int:
    cfg = load_config(args.target_config)
    source = load_checkpoint(args.source)
    gen_spec = cfg.generator_spec(default_in_channels=args.target_channels)
    disc_spec = cfg.discriminator_spec(default_image_channels=args.target_channels)
    ckpt, report = transfer_weights(source, gen_spec, disc_spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, out / "checkpoint")
    report.save(out / REPORT_FILE)
    write_resolved_config(
        out / "resolved_config.toml",
        resolved_sections(generator_spec=gen_spec, discriminator_spec=disc_spec),
    )
    log.info(
        "transferred %d tensors, reinitialized %d (%s)",
        len(report.copied),
        len(report.reinitialized),
        out,
    )
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.load(args.data)
    result = evaluate(
        ckpt, manifest, threshold=args.threshold, batch_size=args.batch_size
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    log.info(
        "val_ftl=%.4f val_ti=%.4f val_iou=%.4f dice=%.4f -> %s",
        result["val_ftl"],
        result["val_ti"],
        result["val_iou"],
        result["dice"],
        out,
    )
    return 0


def _cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    fractions, seeds = cfg.experiment_settings()
    train_config = _train_config_from_args(cfg, args)
    plan = ExperimentPlan(
        dataset_a=args.data_a,
        dataset_b=args.data_b,
        dataset_c=args.data_c,
        train_config=train_config,
        fractions=fractions,
        seeds=seeds,
        generator_spec=cfg.generator_spec(default_in_channels=4)
        if cfg.generator
        else None,
        discriminator_spec=cfg.discriminator_spec(default_image_channels=4)
        if cfg.discriminator
        else None,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved_config(
        out / "resolved_config.toml",
        resolved_sections(
            generator_spec=plan.generator_spec,
            discriminator_spec=plan.discriminator_spec,
            train_config=train_config,
            fractions=fractions,
            seeds=seeds,
        ),
    )
    results = run_experiment(plan, out, jobs=args.jobs)
    log.info("completed %d runs under %s", len(results), out)
    return 0


def _cmd_report(args) -> int:
    results = load_results(args.runs)
    dataset_a = DatasetManifest.load(args.data_a) if args.data_a else None
    payload = build_report(
        results,
        args.out,
        runs_root=args.runs,
        dataset_a=dataset_a,
        mask_samples=args.samples,
    )
    log.info(
        "report written to %s (matched_at_fraction: %s)",
        args.out,
        payload["matched_at_fraction"],
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="patchgan-segkit",
        description="Patch-adversarial segmentation toolkit",
        epilog=(
            f"Set {CACHE_ENV_VAR} to relocate intermediate tensors "
            f"(e.g. cached training subsets)."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth-data", help="generate a synthetic blob dataset",
                       formatter_class=fmt, add_help=True)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", default=None, help="TOML config ([data] section)")
    p.add_argument("--n", type=int, default=None, help="number of training samples (default 64)")
    p.add_argument("--channels", type=int, default=None, choices=(3, 4),
                   help="image channels (default 4)")
    p.add_argument("--side", type=int, default=None, help="image side in pixels (default 256)")
    p.add_argument("--seed", type=int, default=None, help="dataset seed (default 0)")
    p.add_argument("--n-test", type=int, default=None,
                   help="test samples (default n/8, at least 2)")
    p.add_argument("--noise-sigma", type=float, default=None,
                   help="Gaussian noise sigma (default 0.05)")
    p.add_argument("--blob-count", type=int, nargs=2, metavar=("LO", "HI"),
                   default=None, help="blob count range (default 2 6)")
    p.add_argument("--blob-radius", type=int, nargs=2, metavar=("LO", "HI"),
                   default=None, help="blob radius range (default 8 40)")
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("prepare-data", help="run a preprocessing recipe on raw pairs",
                       formatter_class=fmt)
    p.add_argument("--recipe", required=True, choices=("ff", "fc", "coco"),
                   help="preprocessing recipe")
    p.add_argument("--input", required=True, help="raw dataset directory (manifest layout)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0, help="recipe seed")
    p.add_argument("--class-name", default=None,
                   help="class to binarize (coco recipe only)")
    p.add_argument("--name", default=None, help="name of the produced dataset")
    p.set_defaults(func=_cmd_prepare_data)

    p = sub.add_parser("train", help="train generator and discriminator",
                       formatter_class=fmt)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", default=None, help="TOML run config")
    p.add_argument("--init", default=None,
                   help="checkpoint directory to initialize parameters from")
    _add_train_overrides(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("transfer", help="move weights into a fresh architecture "
                       "(input layer excluded)", formatter_class=fmt)
    p.add_argument("--source", required=True, help="source checkpoint directory")
    p.add_argument("--target-config", default=None,
                   help="TOML config describing the target architecture")
    p.add_argument("--target-channels", type=int, default=None,
                   help="target input channels when the config omits them (default 4)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for freshly initialized target tensors")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset's test split",
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="binarization threshold for IoU/Dice")
    p.add_argument("--batch-size", type=int, default=16, help="evaluation batch size")
    p.add_argument("--out", required=True, help="output JSON file")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run the scratch-vs-transfer matrix",
                       formatter_class=fmt)
    p.add_argument("--config", default=None, help="TOML run config")
    p.add_argument("--data-a", required=True, help="transfer-target dataset (role A)")
    p.add_argument("--data-b", required=True, help="pretraining dataset (role B)")
    p.add_argument("--data-c", required=True, help="pretraining dataset (role C)")
    p.add_argument("--out", required=True, help="runs output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    _add_train_overrides(p)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("report", help="build comparison artifacts from completed runs",
                       formatter_class=fmt)
    p.add_argument("--runs", required=True, help="runs directory of an experiment")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--data-a", default=None,
                   help="role-A dataset directory (enables mask grids)")
    p.add_argument("--samples", type=int, default=4,
                   help="validation samples per mask grid")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        log.error("%s", exc)
        return 1
    except (DataError, ShapeError) as exc:
        log.error("%s", exc)
        return 2
    except SegkitError as exc:
        log.error("%s", exc)
        return 3
    except Exception:  # noqa: BLE001 -- report unexpected failures as runtime errors
        log.exception("unexpected error")
        return 3


if __name__ == "__main__":
    sys.exit(main())
