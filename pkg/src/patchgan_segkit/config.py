"""TOML run configuration.

Sections map one-to-one onto the toolkit's dataclasses:

    [model.generator]     -> GeneratorSpec
    [model.discriminator] -> DiscriminatorSpec
    [loss]                -> TverskyParams
    [train]               -> TrainConfig (loss params come from [loss])
    [data]                -> SynthConfig
    [experiment]          -> fractions / seeds of an ExperimentPlan

Unknown sections or keys are rejected. Defaults fill whatever a file leaves
out, and every run directory receives the fully resolved configuration as
``resolved_config.toml``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .discriminator import DiscriminatorSpec
from .data.synthetic import SynthConfig
from .errors import ConfigurationError
from .generator import GeneratorSpec
from .losses import TverskyParams
from .trainer import TrainConfig

_SECTIONS = ("model", "loss", "train", "data", "experiment")
_MODEL_SUBSECTIONS = ("generator", "discriminator")

# [train] keys; loss_params is assembled from [loss], never set directly.
_TRAIN_KEYS = tuple(
    f.name for f in dataclasses.fields(TrainConfig) if f.name != "loss_params"
)
_EXPERIMENT_KEYS = ("fractions", "seeds")


def _check_keys(section: str, obj: dict, allowed: tuple[str, ...]) -> None:
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} in [{section}]; allowed keys: "
            f"{sorted(allowed)}"
        )


def _coerce(obj: dict, cls) -> dict:
    """Cast TOML values to the dataclass field types (int -> float, list ->
    tuple) without losing unknown-key detection done beforehand."""
    out = {}
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    for key, value in obj.items():
        t = types.get(key, "")
        if isinstance(value, bool):
            out[key] = value
        elif "float" in str(t) and isinstance(value, int):
            out[key] = float(value)
        elif isinstance(value, list):
            out[key] = tuple(value)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Parsed config file; raw sections are kept so omitted keys can still be
    defaulted from context (e.g. channel counts taken from a dataset)."""

    generator: dict = field(default_factory=dict)
    discriminator: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    path: Path | None = None

    def tversky_params(self) -> TverskyParams:
        params = TverskyParams(**_coerce(self.loss, TverskyParams))
        params.validate()
        return params

    def train_config(self, **overrides) -> TrainConfig:
        merged = {**self.train, **{k: v for k, v in overrides.items() if v is not None}}
        config = TrainConfig(
            loss_params=self.tversky_params(), **_coerce(merged, TrainConfig)
        )
        config.validate()
        return config

    def generator_spec(self, default_in_channels: int | None = None) -> GeneratorSpec:
        section = dict(self.generator)
        if "in_channels" not in section and default_in_channels is not None:
            section["in_channels"] = default_in_channels
        spec = GeneratorSpec(**_coerce(section, GeneratorSpec))
        spec.validate()
        return spec

    def discriminator_spec(
        self, default_image_channels: int | None = None
    ) -> DiscriminatorSpec:
        section = dict(self.discriminator)
        if "image_channels" not in section and default_image_channels is not None:
            section["image_channels"] = default_image_channels
        spec = DiscriminatorSpec(**_coerce(section, DiscriminatorSpec))
        spec.validate()
        return spec

    def synth_config(self, **overrides) -> SynthConfig:
        merged = {**self.data, **{k: v for k, v in overrides.items() if v is not None}}
        config = SynthConfig(**_coerce(merged, SynthConfig))
        config.validate()
        return config

    def experiment_settings(self) -> tuple[tuple[float, ...], tuple[int, ...]]:
        from .experiments import DEFAULT_FRACTIONS

        fractions = tuple(
            float(f) for f in self.experiment.get("fractions", DEFAULT_FRACTIONS)
        )
        seeds = tuple(int(s) for s in self.experiment.get("seeds", (0,)))
        return fractions, seeds


def _field_names(cls) -> tuple[str, ...]:
    return tuple(f.name for f in dataclasses.fields(cls))


def load_config(path: str | Path | None) -> RunConfig:
    """Parse and validate a TOML config file; None yields all defaults."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed TOML in {path}: {exc}") from exc

    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigurationError(
            f"unknown section(s) {sorted(unknown)} in {path}; allowed: "
            f"{list(_SECTIONS)}"
        )
    model = doc.get("model", {})
    unknown = set(model) - set(_MODEL_SUBSECTIONS)
    if unknown:
        raise ConfigurationError(
            f"unknown subsection(s) {sorted(unknown)} in [model]; allowed: "
            f"{list(_MODEL_SUBSECTIONS)}"
        )

    config = RunConfig(
        generator=dict(model.get("generator", {})),
        discriminator=dict(model.get("discriminator", {})),
        loss=dict(doc.get("loss", {})),
        train=dict(doc.get("train", {})),
        data=dict(doc.get("data", {})),
        experiment=dict(doc.get("experiment", {})),
        path=path,
    )
    _check_keys("model.generator", config.generator, _field_names(GeneratorSpec))
    _check_keys(
        "model.discriminator", config.discriminator, _field_names(DiscriminatorSpec)
    )
    _check_keys("loss", config.loss, _field_names(TverskyParams))
    _check_keys("train", config.train, _TRAIN_KEYS)
    _check_keys("data", config.data, _field_names(SynthConfig))
    _check_keys("experiment", config.experiment, _EXPERIMENT_KEYS)
    return config


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise ConfigurationError(f"cannot emit TOML value of type {type(value).__name__}")


def _toml_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    return _toml_scalar(value)


def emit_toml(sections: dict[str, dict]) -> str:
    """Serialize nested {section: {key: value}} dicts as TOML (None skipped)."""
    lines = []
    for section, obj in sections.items():
        lines.append(f"[{section}]")
        for key, value in obj.items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def resolved_sections(
    generator_spec: GeneratorSpec | None = None,
    discriminator_spec: DiscriminatorSpec | None = None,
    train_config: TrainConfig | None = None,
    synth_config: SynthConfig | None = None,
    fractions: tuple[float, ...] | None = None,
    seeds: tuple[int, ...] | None = None,
) -> dict[str, dict]:
    """Fully resolved config sections (defaults applied, derived fields
    expanded) ready for :func:`emit_toml`."""
    sections: dict[str, dict] = {}
    if generator_spec is not None:
        d = dataclasses.asdict(generator_spec)
        d["encoder_filters"] = list(generator_spec.encoder_filters)
        d["dropout_blocks"] = sorted(generator_spec.resolved_dropout_blocks)
        sections["model.generator"] = d
    if discriminator_spec is not None:
        d = dataclasses.asdict(discriminator_spec)
        d["layer_filters"] = list(discriminator_spec.layer_filters)
        d["strides"] = list(discriminator_spec.strides)
        sections["model.discriminator"] = d
    if train_config is not None:
        sections["loss"] = dataclasses.asdict(train_config.loss_params)
        d = dataclasses.asdict(train_config)
        d.pop("loss_params")
        sections["train"] = d
    if synth_config is not None:
        d = dataclasses.asdict(synth_config)
        d["blob_count_range"] = list(synth_config.blob_count_range)
        d["blob_radius_range"] = list(synth_config.blob_radius_range)
        d["n_test"] = synth_config.resolved_n_test
        sections["data"] = d
    if fractions is not None or seeds is not None:
        sections["experiment"] = {
            "fractions": list(fractions or ()),
            "seeds": list(seeds or ()),
        }
    return sections


def write_resolved_config(path: str | Path, sections: dict[str, dict]) -> None:
    Path(path).write_text(emit_toml(sections), encoding="utf-8")
