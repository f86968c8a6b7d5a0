"""Versioned JSON run configuration with strict key checking."""

import dataclasses
import json
from dataclasses import dataclass, field

from .ars import ArsConfig
from .harness.simulate import SimConfig
from .memory import MemoryConfig
from .readiness import ReadinessTrainConfig
from .reasoner import RetrievalConfig
from .vecmath import SmoothingConfig

__all__ = ["CONFIG_VERSION", "ConfigError", "RunConfig", "load_config", "parse_config"]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted location of the problem."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")

    def to_dict(self):
        return {"error": "config", "path": self.path, "message": self.message}


@dataclass(frozen=True)
class PipelineSettings:
    policy: str = "readiness"
    stride: int = 1
    context: bool = True
    threshold: float = 0.35
    hidden: int = 16


@dataclass(frozen=True)
class SweepSettings:
    gamma_e: tuple = (1.0, 2.0, 4.0, 6.0, 8.0)
    gamma_l: tuple = (0.5, 1.0, 2.0, 4.0, 8.0)


@dataclass(frozen=True)
class BenchSettings:
    lengths: tuple = (1000, 10000)
    window: int = 2000


@dataclass(frozen=True)
class SuiteSettings:
    name: str | None = None


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    readiness: ReadinessTrainConfig = field(default_factory=ReadinessTrainConfig)
    ars: ArsConfig = field(default_factory=ArsConfig)
    simulate: SimConfig = field(default_factory=SimConfig)
    suite: SuiteSettings = field(default_factory=SuiteSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)


_NESTED = {"$.ars.smoothing": SmoothingConfig}


def _build(cls, obj, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k in obj:
        if k not in fields:
            raise ConfigError(f"{path}.{k}", "unknown key")
    kwargs = {}
    for k, v in obj.items():
        sub = f"{path}.{k}"
        if sub in _NESTED:
            v = _build(_NESTED[sub], v, sub)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        # name the offending key when the message mentions one
        culprit = next((k for k in kwargs if k in str(exc)), None)
        raise ConfigError(f"{path}.{culprit}" if culprit else path, str(exc)) from None


def parse_config(doc):
    if not isinstance(doc, dict):
        raise ConfigError("$", "expected a JSON object")
    version = doc.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError("$.version", f"expected {CONFIG_VERSION}, got {version!r}")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    kwargs = {}
    for k, v in doc.items():
        if k not in sections:
            raise ConfigError(f"$.{k}", "unknown key")
        if k in ("version", "seed"):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"$.{k}", "expected an integer")
            kwargs[k] = v
            continue
        kwargs[k] = _build(sections[k].default_factory, v, f"$.{k}")
    return RunConfig(**kwargs)


def load_config(path):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    return parse_config(doc)


def config_to_dict(cfg):
    return dataclasses.asdict(cfg)
