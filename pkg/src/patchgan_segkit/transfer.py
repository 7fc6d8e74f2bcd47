"""Weight transfer between checkpoints with input-layer exclusion.

A fresh target parameter map is built from seeded initialization; every
source tensor whose name exists in the target with a matching shape is then
copied in bitwise. The first convolution of the generator encoder and of the
discriminator stack is always excluded -- even when shapes match -- so a
source trained on a different input channel count can initialize the target.
Everything not copied keeps its fresh initialization and is recorded with a
reason. Optimizer state is never transferred.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import (
    Checkpoint,
    DISCRIMINATOR_PREFIX,
    GENERATOR_PREFIX,
    network_state_numpy,
)
from .discriminator import DiscriminatorSpec, build_discriminator
from .generator import GeneratorSpec, build_generator

REASON_INPUT_LAYER = "input_layer"
REASON_SHAPE_MISMATCH = "shape_mismatch"
REASON_MISSING = "missing_in_target"

REPORT_FILE = "transfer_report.json"


@dataclass
class TransferReport:
    """Per-parameter outcome of a transfer: names copied bitwise, names left
    at fresh initialization, and the reason each exclusion happened."""

    copied: list[str] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)
    reinitialized: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["excluded"] = [list(pair) for pair in self.excluded]
        return d

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


def transfer_weights(
    source: Checkpoint,
    generator_spec: GeneratorSpec,
    discriminator_spec: DiscriminatorSpec,
    seed: int,
) -> tuple[Checkpoint, TransferReport]:
    """Initialize a target architecture from a source checkpoint.

    Returns the epoch-0 target checkpoint and a report whose ``copied`` and
    ``reinitialized`` lists partition the target's parameter names.
    """
    gen = build_generator(generator_spec, seed=seed)
    disc = build_discriminator(discriminator_spec, seed=seed + 1)

    input_layer = {
        GENERATOR_PREFIX + name for name in gen.input_parameter_names()
    } | {DISCRIMINATOR_PREFIX + name for name in disc.input_parameter_names()}

    target = network_state_numpy(gen, GENERATOR_PREFIX)
    target.update(network_state_numpy(disc, DISCRIMINATOR_PREFIX))

    report = TransferReport()
    for name, fresh in target.items():
        if name in input_layer:
            report.excluded.append((name, REASON_INPUT_LAYER))
        elif name not in source.parameters:
            report.excluded.append((name, REASON_MISSING))
        elif source.parameters[name].shape != fresh.shape:
            report.excluded.append((name, REASON_SHAPE_MISMATCH))
        else:
            target[name] = np.array(source.parameters[name], copy=True)
            report.copied.append(name)
            continue
        report.reinitialized.append(name)

    result = Checkpoint(
        generator_spec=generator_spec,
        discriminator_spec=discriminator_spec,
        epoch=0,
        parameters=target,
        optimizer_state={},
        train_config=source.train_config,
        provenance=f"transfer({source.provenance})",
    )
    return result, report
