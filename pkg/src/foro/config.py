"""Experiment configuration: JSON schema, defaults, strict validation.

Unknown keys anywhere in the document are errors, so typos in ablation
sweeps fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from foro.backbone import BackboneConfig
from foro.protocol import SyntheticSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CmaConfig:
    population: int = 6
    generations: int = 20
    covariance: str = "full"
    initial_step: float = 0.3


@dataclass(frozen=True)
class FitnessSection:
    lam: float = 0.3
    alpha: float = 0.1
    eval_batch: int = 32


@dataclass(frozen=True)
class EncodingConfig:
    dim: int = 8192
    gamma: float = 0.1
    activation: str = "relu"


@dataclass(frozen=True)
class StreamConfig:
    type: str = "synthetic"              # "synthetic" or "manifest"
    manifest: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "foro"
    seed: int = 0
    prompts: int = 3
    prompt_adoption: str = "first-task"
    out_dir: str = "runs/out"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    cma: CmaConfig = field(default_factory=CmaConfig)
    fitness: FitnessSection = field(default_factory=FitnessSection)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, doc: dict, path: str):
    allowed = cls.__dataclass_fields__
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}{key!r}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad section {path or 'top level'}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    sections = {
        "backbone": BackboneConfig,
        "cma": CmaConfig,
        "fitness": FitnessSection,
        "encoding": EncodingConfig,
    }
    built = {}
    for name, cls in sections.items():
        if name in doc:
            section = doc.pop(name)
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            built[name] = _build(cls, section, f"{name}.")
    if "stream" in doc:
        stream_doc = dict(doc.pop("stream"))
        stream_type = stream_doc.pop("type", "synthetic")
        if stream_type == "synthetic":
            spec = _build(SyntheticSpec, stream_doc, "stream.")
            built["stream"] = StreamConfig(type="synthetic", synthetic=spec)
        elif stream_type == "manifest":
            manifest = stream_doc.pop("manifest", None)
            if stream_doc:
                raise ConfigError(
                    f"unknown keys in manifest stream: {sorted(stream_doc)}")
            if not manifest:
                raise ConfigError("manifest stream needs a 'manifest' path")
            built["stream"] = StreamConfig(type="manifest", manifest=manifest)
        else:
            raise ConfigError(f"unknown stream type {stream_type!r}")
    cfg = _build(ExperimentConfig, {**doc, **built}, "")
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = config_from_dict(doc)
    if cfg.stream.type == "manifest":
        manifest = (path.parent / cfg.stream.manifest)
        if not manifest.exists():
            raise ConfigError(f"manifest {manifest} does not exist")
        cfg = replace_stream_manifest(cfg, str(manifest))
    return cfg


def replace_stream_manifest(cfg: ExperimentConfig, resolved: str) -> ExperimentConfig:
    from dataclasses import replace
    return replace(cfg, stream=replace(cfg.stream, manifest=resolved))


def validate(cfg: ExperimentConfig) -> None:
    if cfg.mode not in ("foro", "kem-only", "fitness-only"):
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.prompts < 1:
        raise ConfigError("prompts must be >= 1")
    if cfg.cma.population < 2:
        raise ConfigError("cma.population must be >= 2")
    if cfg.cma.generations < 0:
        raise ConfigError("cma.generations must be >= 0")
    if cfg.cma.covariance not in ("full", "block-diagonal"):
        raise ConfigError(f"unknown covariance mode {cfg.cma.covariance!r}")
    if cfg.cma.initial_step <= 0:
        raise ConfigError("cma.initial_step must be positive")
    if cfg.prompt_adoption not in ("first-task", "every-task"):
        raise ConfigError(f"unknown prompt_adoption {cfg.prompt_adoption!r}")
    if cfg.fitness.lam < 0:
        raise ConfigError("fitness.lam must be >= 0")
    if not 0.0 <= cfg.fitness.alpha <= 1.0:
        raise ConfigError("fitness.alpha must be in [0, 1]")
    if cfg.fitness.eval_batch < 1:
        raise ConfigError("fitness.eval_batch must be >= 1")
    if cfg.encoding.dim < 1:
        raise ConfigError("encoding.dim must be >= 1")
    if cfg.encoding.gamma <= 0:
        raise ConfigError("encoding.gamma must be positive")
    if cfg.encoding.activation not in ("relu", "tanh", "identity"):
        raise ConfigError(f"unknown activation {cfg.encoding.activation!r}")
    try:
        cfg.backbone.validate()
        if cfg.stream.type == "synthetic":
            cfg.stream.synthetic.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if (cfg.stream.type == "synthetic"
            and cfg.stream.synthetic.kind == "patches"
            and (cfg.stream.synthetic.patches != cfg.backbone.patches
                 or cfg.stream.synthetic.embed_dim != cfg.backbone.embed_dim)):
        raise ConfigError(
            "patch stream shape must match the backbone (patches, embed_dim)")
