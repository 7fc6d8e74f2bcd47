"""Checkpoint persistence: named parameter tensors plus architecture metadata.

A checkpoint directory holds ``meta.json`` (specs, epoch, train config,
provenance, and an index of every tensor with its shape and dtype) and one
PGT1 file per tensor under ``tensors/``. Parameter names are prefixed with
``generator.`` / ``discriminator.``; optimizer state uses ``g.``/``d.``
prefixes and is persisted but never transferred or restored into a new run.

All tensors are stored as float32. Integer state (batch-norm batch counters)
is cast to float32 on save and back to the network's dtype on load, so a
save/load/save round trip is byte-identical.
"""

from __future__ import annotations

import dataclasses
import json
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import torch

from .data import tensorio
from .discriminator import DiscriminatorNetwork, DiscriminatorSpec, build_discriminator
from .errors import DataError
from .generator import GeneratorNetwork, GeneratorSpec, build_generator

if TYPE_CHECKING:
    from .trainer import TrainConfig

META_FILE = "meta.json"
TENSOR_DIR = "tensors"
FORMAT = "patchgan-segkit-checkpoint-v1"

GENERATOR_PREFIX = "generator."
DISCRIMINATOR_PREFIX = "discriminator."


def spec_to_dict(spec: GeneratorSpec | DiscriminatorSpec) -> dict:
    d = dataclasses.asdict(spec)
    if "encoder_filters" in d:
        d["encoder_filters"] = list(d["encoder_filters"])
    if "layer_filters" in d:
        d["layer_filters"] = list(d["layer_filters"])
        d["strides"] = list(d["strides"])
    if d.get("dropout_blocks") is not None:
        d["dropout_blocks"] = sorted(d["dropout_blocks"])
    return d


def generator_spec_from_dict(d: dict) -> GeneratorSpec:
    d = dict(d)
    if d.get("dropout_blocks") is not None:
        d["dropout_blocks"] = frozenset(d["dropout_blocks"])
    if "encoder_filters" in d:
        d["encoder_filters"] = tuple(d["encoder_filters"])
    return GeneratorSpec(**d)


def discriminator_spec_from_dict(d: dict) -> DiscriminatorSpec:
    d = dict(d)
    if "layer_filters" in d:
        d["layer_filters"] = tuple(d["layer_filters"])
    if "strides" in d:
        d["strides"] = tuple(d["strides"])
    return DiscriminatorSpec(**d)


def network_state_numpy(module: torch.nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Snapshot a module's state_dict as float32 numpy arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        # np.asarray keeps 0-dim scalars 0-dim (ascontiguousarray would not)
        out[prefix + name] = np.asarray(arr, dtype=np.float32, order="C").copy()
    return out


def load_network_state(
    module: torch.nn.Module, params: dict[str, np.ndarray], prefix: str
) -> None:
    """Load a prefixed float32 parameter map into a module, casting each
    tensor back to the dtype the module expects."""
    target = module.state_dict()
    state = {}
    for name, tensor in target.items():
        key = prefix + name
        if key not in params:
            raise DataError(f"checkpoint is missing parameter {key!r}")
        arr = params[key]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise DataError(
                f"checkpoint parameter {key!r} has shape {tuple(arr.shape)}, "
                f"expected {tuple(tensor.shape)}"
            )
        state[name] = torch.from_numpy(
            np.asarray(arr, order="C").copy()
        ).to(tensor.dtype)
    module.load_state_dict(state)


@dataclass
class Checkpoint:
    """In-memory checkpoint: both networks' parameters plus metadata."""

    generator_spec: GeneratorSpec
    discriminator_spec: DiscriminatorSpec
    epoch: int
    parameters: dict[str, np.ndarray]
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)
    train_config: "TrainConfig | None" = None
    provenance: str = ""

    @classmethod
    def from_networks(
        cls,
        generator: GeneratorNetwork,
        discriminator: DiscriminatorNetwork,
        epoch: int = 0,
        optimizer_state: dict[str, np.ndarray] | None = None,
        train_config: "TrainConfig | None" = None,
        provenance: str = "",
    ) -> "Checkpoint":
        params = network_state_numpy(generator, GENERATOR_PREFIX)
        params.update(network_state_numpy(discriminator, DISCRIMINATOR_PREFIX))
        return cls(
            generator_spec=generator.spec,
            discriminator_spec=discriminator.spec,
            epoch=epoch,
            parameters=params,
            optimizer_state=dict(optimizer_state or {}),
            train_config=train_config,
            provenance=provenance,
        )

    def build_networks(
        self, device: str | torch.device = "cpu"
    ) -> tuple[GeneratorNetwork, DiscriminatorNetwork]:
        """Rebuild both networks and load this checkpoint's parameters."""
        gen = build_generator(self.generator_spec, seed=0)
        disc = build_discriminator(self.discriminator_spec, seed=0)
        load_network_state(gen, self.parameters, GENERATOR_PREFIX)
        load_network_state(disc, self.parameters, DISCRIMINATOR_PREFIX)
        return gen.to(torch.device(device)), disc.to(torch.device(device))

    def parameters_digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.parameters):
            h.update(name.encode("utf-8"))
            h.update(self.parameters[name].tobytes())
        return h.hexdigest()


def _tensor_file(name: str) -> str:
    return f"{TENSOR_DIR}/{name}.pgt"


def _index(tensors: dict[str, np.ndarray]) -> dict:
    return {
        name: {
            "file": _tensor_file(name),
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
        }
        for name, arr in sorted(tensors.items())
    }


def save_checkpoint(ckpt: Checkpoint, out_dir: str | Path) -> Path:
    """Write a checkpoint directory atomically (staged sibling + rename)."""
    from .trainer import train_config_to_dict

    out_dir = Path(out_dir)
    staging = out_dir.parent / f".{out_dir.name}.tmp-{os.getpid()}"
    if staging.exists():
        shutil.rmtree(staging)
    (staging / TENSOR_DIR).mkdir(parents=True)

    for name, arr in ckpt.parameters.items():
        tensorio.write_tensor(staging / _tensor_file(name), arr.astype(np.float32))
    for name, arr in ckpt.optimizer_state.items():
        tensorio.write_tensor(staging / _tensor_file(name), arr.astype(np.float32))

    meta = {
        "format": FORMAT,
        "epoch": ckpt.epoch,
        "generator_spec": spec_to_dict(ckpt.generator_spec),
        "discriminator_spec": spec_to_dict(ckpt.discriminator_spec),
        "train_config": (
            train_config_to_dict(ckpt.train_config) if ckpt.train_config else None
        ),
        "provenance": ckpt.provenance,
        "parameters": _index(ckpt.parameters),
        "optimizer_state": _index(ckpt.optimizer_state),
    }
    (staging / META_FILE).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    if out_dir.exists():
        shutil.rmtree(out_dir)
    os.replace(staging, out_dir)
    return out_dir


def _load_tensors(root: Path, index: dict) -> dict[str, np.ndarray]:
    tensors = {}
    for name, entry in index.items():
        arr = tensorio.read_tensor(root / entry["file"])
        if list(arr.shape) != list(entry["shape"]) or str(arr.dtype) != entry["dtype"]:
            raise DataError(
                f"corrupt checkpoint: tensor {name!r} is {arr.dtype}{arr.shape}, "
                f"index says {entry['dtype']}{tuple(entry['shape'])}"
            )
        tensors[name] = arr
    return tensors


def load_checkpoint(path: str | Path) -> Checkpoint:
    from .trainer import train_config_from_dict

    root = Path(path)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise DataError(f"{root} is not a checkpoint directory (no {META_FILE})")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt checkpoint meta in {root}: {exc}") from exc
    if meta.get("format") != FORMAT:
        raise DataError(f"{root}: unsupported checkpoint format {meta.get('format')!r}")
    return Checkpoint(
        generator_spec=generator_spec_from_dict(meta["generator_spec"]),
        discriminator_spec=discriminator_spec_from_dict(meta["discriminator_spec"]),
        epoch=int(meta["epoch"]),
        parameters=_load_tensors(root, meta["parameters"]),
        optimizer_state=_load_tensors(root, meta.get("optimizer_state", {})),
        train_config=(
            train_config_from_dict(meta["train_config"])
            if meta.get("train_config")
            else None
        ),
        provenance=meta.get("provenance", ""),
    )
