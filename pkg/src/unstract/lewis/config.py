"""Run configuration.

One JSON document drives every pipeline stage. It is loaded into nested
dataclasses; unknown keys and wrongly typed values raise ``ConfigError``
naming the dotted key path. Omitted keys take their defaults, and the hash
of the fully defaulted document identifies every artifact a run produces.
"""

import dataclasses
import json
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from unstract.lewis.corpus import DEFAULT_MAX_LEN, TaskStyles
from unstract.lewis.editor import DecodeConfig
from unstract.lewis.exceptions import ConfigError
from unstract.lewis.neural.model import ModelConfig
from unstract.lewis.neural.optim import TrainConfig
from unstract.lewis.synthesis import SynthesisConfig
from unstract.lewis.utils import LewisUtils

INFILLER_KINDS = ("seq2seq", "ngram")
SMOOTHING_METHODS = ("none", "add-epsilon")


@dataclass
class PathsConfig:
    """Corpus files, one per style in style order."""

    workdir: str = "work"
    train: list[str] = field(default_factory=list)
    valid: list[str] = field(default_factory=list)
    test: list[str] = field(default_factory=list)
    references: list[str] = field(default_factory=list)


@dataclass
class StylesConfig:
    names: list[str] = field(default_factory=lambda: ["negative", "positive"])

    def task_styles(self) -> TaskStyles:
        return TaskStyles.from_names(self.names)


@dataclass
class CorpusConfig:
    max_len: int = DEFAULT_MAX_LEN
    min_count: int = 1


@dataclass
class ModelsConfig:
    classifier: ModelConfig = field(default_factory=ModelConfig)
    eval_classifier: ModelConfig = field(default_factory=ModelConfig)
    infiller: ModelConfig = field(default_factory=ModelConfig)
    tagger: ModelConfig = field(default_factory=ModelConfig)
    generator: ModelConfig = field(default_factory=ModelConfig)
    seq2seq: ModelConfig = field(default_factory=ModelConfig)


@dataclass
class TrainingConfig:
    classifier: TrainConfig = field(default_factory=TrainConfig)
    eval_classifier: TrainConfig = field(default_factory=TrainConfig)
    infiller: TrainConfig = field(default_factory=TrainConfig)
    tagger: TrainConfig = field(default_factory=TrainConfig)
    generator: TrainConfig = field(default_factory=TrainConfig)
    seq2seq: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class InfillerConfig:
    kind: str = "seq2seq"
    ngram_order: int = 3
    noise_copies: int = 4
    min_corpus_size: int = 16


@dataclass
class SeedsConfig:
    vocabulary: int = 0
    classifier: int = 1
    eval_classifier: int = 2
    infiller: int = 3
    synthesis: int = 4
    tagger: int = 5
    generator: int = 6
    seq2seq: int = 7
    transfer: int = 8

    def offset(self, delta: int) -> "SeedsConfig":
        return SeedsConfig(**{f.name: getattr(self, f.name) + delta for f in dataclasses.fields(self)})


@dataclass
class EvalConfig:
    max_n: int = 4
    smoothing: str = "none"
    epsilon: float = 0.1
    heldout_fraction: float = 0.1


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    styles: StylesConfig = field(default_factory=StylesConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    infiller: InfillerConfig = field(default_factory=InfillerConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return LewisUtils.sha256_bytes(LewisUtils.canonical_json(self.to_dict()).encode("utf-8"))

    def validate(self) -> None:
        try:
            self.styles.task_styles()
        except ValueError as e:
            raise ConfigError(str(e), key_path="styles.names") from e
        for name in ("train", "valid", "test", "references"):
            files = getattr(self.paths, name)
            if files and len(files) != 2:
                raise ConfigError("Expected one file per style", key_path=f"paths.{name}")
        for f in dataclasses.fields(self.models):
            getattr(self.models, f.name).validate(f"models.{f.name}")
        for f in dataclasses.fields(self.training):
            train = getattr(self.training, f.name)
            if train.steps < 0 or train.batch_size < 1:
                raise ConfigError("steps must be >= 0 and batch_size >= 1", key_path=f"training.{f.name}")
        if self.infiller.kind not in INFILLER_KINDS:
            raise ConfigError(f"infiller.kind must be one of {INFILLER_KINDS}", key_path="infiller.kind")
        if self.infiller.ngram_order not in (2, 3):
            raise ConfigError("ngram_order must be 2 or 3", key_path="infiller.ngram_order")
        if not 0.0 <= self.synthesis.filter_floor <= 1.0:
            raise ConfigError("filter_floor must be a probability", key_path="synthesis.filter_floor")
        if not 0.0 <= self.synthesis.identity_cap < 1.0:
            raise ConfigError("identity_cap must be in [0, 1)", key_path="synthesis.identity_cap")
        if self.decode.beam < 1 or self.synthesis.beam < 1:
            raise ConfigError("beam must be >= 1", key_path="decode.beam")
        if self.eval.smoothing not in SMOOTHING_METHODS:
            raise ConfigError(f"smoothing must be one of {SMOOTHING_METHODS}", key_path="eval.smoothing")
        for f in dataclasses.fields(self.seeds):
            if getattr(self.seeds, f.name) < 0:
                raise ConfigError("Seeds must be non-negative", key_path=f"seeds.{f.name}")


def _check_scalar(value: Any, kind: Any, key_path: str) -> Any:
    if kind is bool:
        ok = isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif kind is str:
        ok = isinstance(value, str)
    elif typing.get_origin(kind) is list:
        (item,) = typing.get_args(kind)
        if not isinstance(value, list):
            raise ConfigError(f"Expected a list at '{key_path}'", key_path=key_path)
        return [_check_scalar(v, item, f"{key_path}[{i}]") for i, v in enumerate(value)]
    else:  # pragma: no cover - every config field is covered above
        raise ConfigError(f"Unsupported config type at '{key_path}'", key_path=key_path)
    if not ok:
        raise ConfigError(f"Expected {getattr(kind, '__name__', kind)} at '{key_path}', got {type(value).__name__}",
                          key_path=key_path)
    return value


def _build(cls: type, data: Any, prefix: str = "") -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"Expected an object at '{prefix or '<root>'}'", key_path=prefix or None)
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            path = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"Unknown config key '{path}'", key_path=path)
    values = {}
    for name, value in data.items():
        path = f"{prefix}.{name}" if prefix else name
        kind = hints[name]
        if dataclasses.is_dataclass(kind):
            values[name] = _build(kind, value, path)
        else:
            values[name] = _check_scalar(value, kind, path)
    return cls(**values)


def config_from_dict(data: dict, seed_override: Optional[int] = None) -> RunConfig:
    """Builds and validates a RunConfig.

    Args:
        data (dict): Parsed JSON document.
        seed_override (int, optional): Added to every stage seed.

    Raises:
        ConfigError: On unknown keys, wrong types or invalid values.
    """
    config = _build(RunConfig, data)
    if seed_override:
        config.seeds = config.seeds.offset(seed_override)
    config.validate()
    return config


def load_config(path: Union[str, os.PathLike], seed_override: Optional[int] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config is not valid JSON: {e}", path=str(path)) from e
    except OSError as e:
        raise ConfigError(f"Cannot read config: {e.strerror or e}", path=str(path)) from e
    return config_from_dict(data, seed_override)
