"""Configuration for posterior-control training and decoding."""
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, Mapping, Optional, Tuple
import os
import logging
import typing
from pathlib import Path
from dotenv import load_dotenv, dotenv_values

from config.settings import DATA_DIR, MODELS_DIR
from pcgen.errors import ConfigError

logger = logging.getLogger(__name__)

TRAIN_MODES = ("pc0", "pcinf", "pclambda")
CONSTRAINT_MODES = ("one2one", "one2many")


@dataclass
class ModelParams:
    """Network sizes.

    Desk-scale defaults. The full-scale setup uses a 2-layer decoder LSTM with
    hidden 500 / input 400 and dropout 0.2, a 1-layer BiLSTM inference network
    with hidden 500 / input 400, and a table BiLSTM of 300.
    """
    embedding_size: int = 32
    hidden_size: int = 64
    table_embedding_size: int = 8       # field / position embeddings of the table encoder
    max_position: int = 8
    label_embedding_size: int = 32
    num_states: Optional[int] = None    # None -> |F| + 2
    max_seg_len: int = 8
    use_copy: bool = True
    infnet_table_features: bool = False
    share_embeddings: bool = True

    def __post_init__(self):
        for name in ("embedding_size", "hidden_size", "table_embedding_size", "max_position",
                     "label_embedding_size", "max_seg_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_states is not None and self.num_states < 1:
            raise ConfigError(f"states must be positive, got {self.num_states}")


@dataclass
class PenaltyConfig:
    """Posterior-regularization strength and per-term weights."""
    lam: float = 10.0
    mode: str = "one2one"
    use_inclusion: bool = True
    use_exclusion: bool = True
    use_coverage: bool = True
    use_sparsity: bool = True
    use_fit: bool = True
    use_diversity: bool = True
    inclusion_weight: float = 1.0
    exclusion_weight: float = 1.0
    coverage_weight: float = 1.0
    sparsity_weight: float = 1.0
    fit_weight: float = 1.0
    diversity_weight: float = 1.0
    log_floor: float = 1e-12
    split_long_alignments: bool = True
    align_partial: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.mode not in CONSTRAINT_MODES:
            raise ConfigError(f"constraints must be one of {CONSTRAINT_MODES}, got '{self.mode}'")
        for name in ("inclusion", "exclusion", "coverage", "sparsity", "fit", "diversity"):
            if getattr(self, f"{name}_weight") < 0:
                raise ConfigError(f"{name}_weight must be non-negative")
        if not 0 < self.log_floor < 1:
            raise ConfigError(f"log_floor must lie in (0, 1), got {self.log_floor}")

    def weight(self, term: str) -> float:
        """Configured weight of `term`, 0 when the term is disabled."""
        if not getattr(self, f"use_{term}"):
            return 0.0
        return getattr(self, f"{term}_weight")


@dataclass
class TrainConfig:
    """Optimizer and objective settings (Adam, clip 1, halve LR on plateau from epoch 8)."""
    mode: str = "pclambda"
    k_samples: int = 4
    anneal_horizon: Optional[int] = None    # None -> one epoch of steps
    lr_generative: float = 0.002
    lr_inference: float = 0.001
    grad_clip: float = 1.0
    max_epochs: int = 30
    lr_decay_factor: float = 2.0
    lr_decay_start_epoch: int = 8
    early_stop_patience: int = 3
    batch_size: int = 16
    seed: int = 1

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ConfigError(f"mode must be one of {TRAIN_MODES}, got '{self.mode}'")
        if self.k_samples < 2:
            raise ConfigError(f"k_samples must be >= 2 for the mean baseline, got {self.k_samples}")
        if self.lr_generative <= 0 or self.lr_inference <= 0:
            raise ConfigError("learning rates must be positive")
        if self.anneal_horizon is not None and self.anneal_horizon <= 0:
            raise ConfigError(f"anneal_horizon must be positive, got {self.anneal_horizon}")
        if self.grad_clip <= 0 or self.lr_decay_factor < 1:
            raise ConfigError("grad_clip must be positive and lr_decay_factor >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be positive")


@dataclass
class DecodeParams:
    beam_size: int = 5
    length_norm_alpha: float = 1.0
    max_length: Optional[int] = None        # None -> 2x the longest training sentence
    importance_samples: int = 20

    def __post_init__(self):
        if self.beam_size < 1:
            raise ConfigError(f"beam must be >= 1, got {self.beam_size}")
        if self.importance_samples < 1:
            raise ConfigError("importance_samples must be >= 1")


@dataclass
class AppSettings:
    """All settings of one run."""
    model: ModelParams = field(default_factory=ModelParams)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeParams = field(default_factory=DecodeParams)
    data_dir: str = str(DATA_DIR)
    models_dir: str = str(MODELS_DIR)

    @property
    def effective_lambda(self) -> float:
        """PC0 trains with the penalty switched off."""
        return 0.0 if self.train.mode == "pc0" else self.penalty.lam

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AppSettings":
        return cls(
            model=ModelParams(**data.get("model", {})),
            penalty=PenaltyConfig(**data.get("penalty", {})),
            train=TrainConfig(**data.get("train", {})),
            decode=DecodeParams(**data.get("decode", {})),
            data_dir=data.get("data_dir", str(DATA_DIR)),
            models_dir=data.get("models_dir", str(MODELS_DIR)),
        )


SECTIONS = {"model": ModelParams, "penalty": PenaltyConfig, "train": TrainConfig, "decode": DecodeParams}

# Flag names of the command surface that differ from the dataclass attributes
ALIASES: Dict[str, Tuple[str, str]] = {
    "lambda": ("penalty", "lam"),
    "constraints": ("penalty", "mode"),
    "states": ("model", "num_states"),
    "max_seg_len": ("model", "max_seg_len"),
    "beam": ("decode", "beam_size"),
    "alpha": ("decode", "length_norm_alpha"),
    "mode": ("train", "mode"),
    "seed": ("train", "seed"),
    "k_samples": ("train", "k_samples"),
}


def _key_map() -> Dict[str, Tuple[str, str]]:
    keys: Dict[str, Tuple[str, str]] = {}
    for section, klass in SECTIONS.items():
        for f in fields(klass):
            keys.setdefault(f.name, (section, f.name))
            keys[f"{section}.{f.name}"] = (section, f.name)
    keys.update(ALIASES)
    keys["data_dir"] = ("", "data_dir")
    keys["models_dir"] = ("", "models_dir")
    return keys


def _convert(raw: Any, annotation: Any, key: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if typing.get_origin(annotation) is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if text.lower() in ("", "none", "null"):
            return None
        annotation = args[0]
    try:
        if annotation is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for '{key}': {raw!r}")
    return text


def _apply(values: Dict[str, Dict[str, Any]], top: Dict[str, Any], key: str, raw: Any) -> None:
    keys = _key_map()
    norm = key.strip().lower().replace("-", "_")
    if norm not in keys:
        raise ConfigError(f"unknown configuration key '{key}'")
    section, attr = keys[norm]
    if not section:
        top[attr] = str(raw)
        return
    annotation = {f.name: f.type for f in fields(SECTIONS[section])}[attr]
    if isinstance(annotation, str):
        annotation = typing.get_type_hints(SECTIONS[section])[attr]
    values[section][attr] = _convert(raw, annotation, key)


def load_settings(config_path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None) -> AppSettings:
    """Build settings from .env (PC_* variables), a flat key=value file and overrides.

    Later sources win: environment < config file < overrides.
    """
    env_path = Path.cwd() / ".env"
    if env_path.exists():
        load_dotenv(dotenv_path=env_path, override=False)
        logger.debug(f"Environment loaded from {env_path}")

    values: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    top: Dict[str, Any] = {}

    for name, raw in os.environ.items():
        if name.startswith("PC_"):
            _apply(values, top, name[3:], raw)

    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        file_values = dotenv_values(config_path)
        for key, raw in file_values.items():
            if raw is None:
                raise ConfigError(f"config line '{key}' has no value ({config_path})")
            _apply(values, top, key, raw)
        logger.info(f"Config loaded from {config_path} ({len(file_values)} keys)")

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        _apply(values, top, key, raw)

    try:
        settings = AppSettings(
            model=ModelParams(**values["model"]),
            penalty=PenaltyConfig(**values["penalty"]),
            train=TrainConfig(**values["train"]),
            decode=DecodeParams(**values["decode"]),
            **top,
        )
    except TypeError as e:
        raise ConfigError(str(e))
    logger.debug(f"Settings: {settings.to_dict()}")
    return settings
