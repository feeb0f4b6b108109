"""
Run configuration.

A run is configured by a flat ``key=value`` text file; command-line flags and
``--set key=value`` overrides are applied on top. Keys are the ``TrainConfig``
fields, the dotted extension keys (``attention.window``, ``pos.dim``, ...) and
the path keys listed in ``PATH_KEYS``.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import POOLING_MODES, HierEncoderConfig
from .exceptions import ConfigError
from .extensions import AttentionConfig, PosConfig

logger = logging.getLogger(__name__)

VARIANTS = ("WE", "WE_UL", "WE_UL_CL")
CLASSIFIERS = ("LR", "CRF")

PATH_KEYS = (
    "train_path",
    "valid_path",
    "test_path",
    "embeddings_path",
    "label_map_path",
    "class_map_path",
    "out_dir",
)

# Ranges explored when the defaults were tuned; values outside are allowed.
TUNING_RANGES = {
    "hidden_size": (50, 300),
    "dropout": (0.0, 0.8),
    "learning_rate": (0.5, 3.0),
    "num_layers": (1, 4),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class TrainConfig:
    learning_rate: float = 1.0
    lr_halving_period: int = 5
    weight_decay: float = 1e-4
    dropout: float = 0.2
    embed_dropout: bool = True
    max_batch: int = 64
    early_stop_patience: int = 5
    max_epochs: int = 50
    seed: int = 13
    hidden_size: int = 300
    embedding_dim: int = 300
    pooling: str = "last"
    num_layers: int = 1
    bidirectional: bool = True
    variant: str = "WE_UL_CL"
    classifier: str = "CRF"
    min_count: int = 1
    rho: float = 0.95
    eps: float = 1e-6
    clip_norm: float = 5.0
    decay_transitions: bool = False
    eval_workers: int = 1
    normalize: bool = True
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    pos: PosConfig = field(default_factory=PosConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {CLASSIFIERS}, got {self.classifier!r}")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        positive = ("lr_halving_period", "max_batch", "max_epochs", "hidden_size",
                    "embedding_dim", "num_layers", "eval_workers", "min_count")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be positive")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.clip_norm < 0:
            raise ConfigError("learning_rate must be positive; weight_decay and clip_norm non-negative")
        if not 0.0 < self.rho < 1.0 or self.eps <= 0:
            raise ConfigError("rho must lie in (0, 1) and eps must be positive")

    def encoder_config(self):
        return HierEncoderConfig(
            hidden_size=self.hidden_size,
            pooling=self.pooling,
            dropout_rate=self.dropout,
            num_stacked_layers=self.num_layers,
            bidirectional=self.bidirectional,
            embed_dropout=self.embed_dropout,
        )

    def warn_outside_tuning_ranges(self):
        for name, (low, high) in TUNING_RANGES.items():
            value = getattr(self, name)
            if not low <= value <= high:
                logger.warning(f"{name}={value} is outside the tuned range [{low}, {high}]")

    def to_dict(self):
        flat = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    flat[f"{f.name}.{sub.name}"] = getattr(value, sub.name)
            else:
                flat[f.name] = value
        return flat

    @classmethod
    def from_dict(cls, flat):
        top, nested = {}, {"attention": {}, "pos": {}}
        for key, value in flat.items():
            section, _, name = key.partition(".")
            if name:
                if section not in nested:
                    raise ConfigError(f"unknown config key {key!r}")
                nested[section][name] = value
            else:
                top[key] = value
        try:
            return cls(
                **top,
                attention=AttentionConfig(**nested["attention"]),
                pos=PosConfig(**nested["pos"]),
            )
        except TypeError as e:
            raise ConfigError(f"invalid configuration: {e}") from None


def _key_types():
    types = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("attention", "pos"):
            section = AttentionConfig if f.name == "attention" else PosConfig
            for sub in dataclasses.fields(section):
                types[f"{f.name}.{sub.name}"] = sub.type
        else:
            types[f.name] = f.type
    for key in PATH_KEYS:
        types[key] = str
    return types


KEY_TYPES = _key_types()


def parse_value(key, raw):
    if key not in KEY_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = KEY_TYPES[key]
    text = raw.strip()
    if kind is bool:
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if key == "attention.window" and text.lower() in ("none", "all"):
        return None
    if kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            raise ConfigError(f"{key}: expected {kind.__name__}, got {raw!r}") from None
    return text


def parse_assignment(text, source="--set", line_no=None):
    key, sep, value = text.partition("=")
    where = f"{source}:{line_no}" if line_no is not None else source
    if not sep or not key.strip():
        raise ConfigError(f"{where}: expected key=value, got {text!r}")
    key = key.strip()
    try:
        return key, parse_value(key, value)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None


def read_config_file(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    values = {}
    for line_no, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, value = parse_assignment(stripped, str(path), line_no)
        values[key] = value
    return values


def dump_settings(settings):
    """``key=value`` lines, sorted by key, in the run configuration syntax."""
    lines = []
    for key, value in sorted(settings.items()):
        if value is None:
            value = "none" if key == "attention.window" else ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key}={value}\n")
    return "".join(lines)


@dataclass
class RunConfig:
    train: TrainConfig
    paths: dict

    def path(self, key):
        value = self.paths.get(key)
        return Path(value) if value else None

    def flat(self):
        flat = self.train.to_dict()
        flat.update({key: self.paths.get(key) for key in PATH_KEYS})
        return flat

    def dump(self):
        return dump_settings(self.flat())


def load_run_config(path=None, overrides=(), seed=None, out_dir=None):
    """
    Resolve the effective configuration.

    Precedence: defaults < config file < ``seed``/``out_dir`` flags < overrides.

    Raises:
        ConfigError: On unknown keys, unparsable values or invalid combinations.
    """
    values = read_config_file(path) if path else {}
    if seed is not None:
        values["seed"] = int(seed)
    if out_dir is not None:
        values["out_dir"] = str(out_dir)
    for assignment in overrides:
        key, value = parse_assignment(assignment)
        values[key] = value

    paths = {key: values.pop(key, None) or None for key in PATH_KEYS}
    train = TrainConfig.from_dict(values)
    train.warn_outside_tuning_ranges()
    return RunConfig(train=train, paths=paths)
