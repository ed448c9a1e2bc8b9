"""Run configuration stored as flat ``section.key = value`` text.

Example::

    # toy run
    encoder.d0 = 8
    dsa.m = 1
    classifier.hidden = 32, 32
    optim.name = adam
    data.train = train.tsv
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attention import DsaConfig
from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ClassifierConfig, ModelConfig


@dataclass(frozen=True)
class OptimConfig:
    name: str = "adam"
    lr: float = 0.0  # 0 selects the optimizer's default
    weight_decay: float = 1e-5
    halving_trigger: int = 5
    patience: float = 1e-3
    oov_bound: float = 0.005

    def __post_init__(self):
        if self.name not in ("adam", "adadelta"):
            raise ConfigError(f"optim.name must be adam or adadelta, got {self.name!r}")
        if self.lr < 0 or self.weight_decay < 0 or self.patience < 0:
            raise ConfigError("optim.lr, optim.weight_decay and optim.patience must be >= 0")
        if self.halving_trigger < 1:
            raise ConfigError("optim.halving_trigger must be >= 1")
        if self.oov_bound <= 0:
            raise ConfigError("optim.oov_bound must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 256
    seed: int = 0
    precision: str = "float64"
    stop_at_accuracy: float = 0.0  # 0 disables early stopping

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be >= 1")
        if self.precision not in ("float64", "float32"):
            raise ConfigError("train.precision must be float64 or float32")
        if not 0.0 <= self.stop_at_accuracy <= 1.0:
            raise ConfigError("train.stop_at_accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class DataConfig:
    train: str = ""
    eval: str = ""
    vectors: str = ""


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/dsa"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def resolve_paths(self, base: str | Path) -> "RunConfig":
        """Make relative data/output paths relative to ``base``."""
        base = Path(base)

        def fix(p: str) -> str:
            return str(base / p) if p and not Path(p).is_absolute() else p

        data = DataConfig(fix(self.data.train), fix(self.data.eval), fix(self.data.vectors))
        return dataclasses.replace(self, data=data, output=OutputConfig(fix(self.output.dir)))


# section name -> (path of attributes inside RunConfig, dataclass type)
_SECTIONS = {
    "encoder": (("model", "encoder"), EncoderConfig),
    "dsa": (("model", "dsa"), DsaConfig),
    "classifier": (("model", "classifier"), ClassifierConfig),
    "model": (("model",), ModelConfig),
    "optim": (("optim",), OptimConfig),
    "train": (("train",), TrainConfig),
    "data": (("data",), DataConfig),
    "output": (("output",), OutputConfig),
}


def _scalar_fields(cls) -> dict[str, object]:
    """Field name -> default for fields that are not nested dataclasses."""
    out = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if not dataclasses.is_dataclass(default):
            out[f.name] = default
    return out


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw.lower() in ("", "none"):
                return ()
            return tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def to_flat(config: RunConfig) -> dict[str, str]:
    flat = {}
    for section, (path, cls) in _SECTIONS.items():
        obj = config
        for attr in path:
            obj = getattr(obj, attr)
        for name in _scalar_fields(cls):
            flat[f"{section}.{name}"] = _format(getattr(obj, name))
    return flat


def from_flat(flat: dict[str, str]) -> RunConfig:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    for key, raw in flat.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section in {key!r}")
        defaults = _scalar_fields(_SECTIONS[section][1])
        if name not in defaults:
            raise ConfigError(f"unknown config key {key!r}")
        values[section][name] = _coerce(key, raw, defaults[name])
    try:
        model = ModelConfig(
            encoder=EncoderConfig(**values["encoder"]),
            dsa=DsaConfig(**values["dsa"]),
            classifier=ClassifierConfig(**values["classifier"]),
            **values["model"],
        )
        return RunConfig(
            model=model,
            optim=OptimConfig(**values["optim"]),
            train=TrainConfig(**values["train"]),
            data=DataConfig(**values["data"]),
            output=OutputConfig(**values["output"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def parse_text(text: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in flat:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        flat[key] = value.strip()
    return flat


def dumps(config: RunConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in to_flat(config).items())


def loads(text: str) -> RunConfig:
    return from_flat(parse_text(text))


def load(path: str | Path, resolve: bool = True) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    config = loads(text)
    return config.resolve_paths(path.parent) if resolve else config


def model_config_to_flat(model: ModelConfig) -> dict[str, str]:
    flat = to_flat(RunConfig(model=model))
    return {k: v for k, v in flat.items() if k.split(".")[0] in ("encoder", "dsa", "classifier", "model")}


def model_config_from_flat(flat: dict[str, str]) -> ModelConfig:
    return from_flat(flat).model
