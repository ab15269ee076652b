import os
import json
from typing import Dict, Any, Optional, List, Tuple
from dataclasses import dataclass, field, asdict, fields
from enum import Enum
from pathlib import Path
import yaml
from dotenv import load_dotenv

from .errors import ConfigError


# Load environment variables
load_dotenv()


class FusionVariant(str, Enum):
    """The six rungs of the fusion ablation ladder"""
    LATE_CONCAT = "late-concat"
    JF_CONCAT = "jf-concat"
    JF_MMFA = "jf-mmfa"
    JI_MMFA = "ji-mmfa"
    JI_ADF_NO_AUX = "ji-adf-noaux"
    JI_ADF = "ji-adf"


class MMFAVariant(str, Enum):
    SKIP_ONLY = "skip-only"
    ATTENTION_ONLY = "attention-only"
    FULL = "full"


class Modality(str, Enum):
    CLINICAL = "c"
    DERMOSCOPIC = "d"
    METADATA = "m"


def parse_modalities(text: str) -> Tuple[Modality, ...]:
    """Parse 'c+d+m', 'cdm' or 'c,d' into an ordered modality tuple"""
    letters = [ch for ch in text.lower() if ch not in "+, "]
    if not letters:
        raise ConfigError("modalities must not be empty")
    try:
        chosen = {Modality(ch) for ch in letters}
    except ValueError:
        raise ConfigError(f"unknown modality in '{text}' (expected letters c, d, m)")
    return tuple(m for m in Modality if m in chosen)


def modality_label(modalities) -> str:
    """Render a modality tuple the way the ablation tables name rows (C+D+M)"""
    return "+".join(m.value.upper() for m in Modality if m in modalities)


@dataclass
class ModelConfig:
    """Architecture configuration"""
    dc: int = 32
    dd: int = 32
    dm_raw: int = 16
    enc_hidden: int = 128
    d_img: int = 256
    d_meta: int = 256
    d_joint: int = 256
    heads: int = 4
    head_dim: int = 32
    gate_hidden: int = 32
    n_classes: int = 3
    lambda_joint: float = 0.5
    lambda_img: float = 0.25
    lambda_meta: float = 0.25
    fusion_variant: FusionVariant = FusionVariant.JI_ADF
    mmfa_variant: MMFAVariant = MMFAVariant.FULL
    modalities: Tuple[Modality, ...] = (Modality.CLINICAL, Modality.DERMOSCOPIC, Modality.METADATA)
    class_weights: Optional[List[float]] = None
    seed: int = 0

    def __post_init__(self):
        # Coerce plain strings coming from YAML/JSON/CLI
        if not isinstance(self.fusion_variant, FusionVariant):
            self.fusion_variant = _enum_value(FusionVariant, self.fusion_variant, "fusion_variant")
        if not isinstance(self.mmfa_variant, MMFAVariant):
            self.mmfa_variant = _enum_value(MMFAVariant, self.mmfa_variant, "mmfa_variant")
        if isinstance(self.modalities, str):
            self.modalities = parse_modalities(self.modalities)
        elif self.modalities:
            letters = "".join(m.value if isinstance(m, Modality) else str(m) for m in self.modalities)
            self.modalities = parse_modalities(letters)
        else:
            self.modalities = ()
        if self.class_weights is not None:
            self.class_weights = [float(w) for w in self.class_weights]

    @property
    def has_metadata(self) -> bool:
        return Modality.METADATA in self.modalities

    @property
    def has_images(self) -> bool:
        return Modality.CLINICAL in self.modalities or Modality.DERMOSCOPIC in self.modalities

    @property
    def image_input_width(self) -> int:
        """Width of the image-encoder input: only the image blocks that are present"""
        width = 0
        if Modality.CLINICAL in self.modalities:
            width += self.dc
        if Modality.DERMOSCOPIC in self.modalities:
            width += self.dd
        return width

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["fusion_variant"] = self.fusion_variant.value
        data["mmfa_variant"] = self.mmfa_variant.value
        data["modalities"] = [m.value for m in self.modalities]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class TrainConfig:
    """Training protocol"""
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    seed: int = 0


@dataclass
class DataConfig:
    """Defaults for synthetic dataset generation"""
    n_classes: int = 3
    counts: Optional[List[int]] = None
    dc: int = 32
    dd: int = 32
    dm_raw: int = 16
    snr_c: float = 3.0
    snr_d: float = 3.0
    snr_m: float = 3.0
    complementary: bool = True
    test_fraction: float = 0.2
    seed: int = 0


@dataclass
class AppConfig:
    """Main application configuration"""
    app_name: str = "JI-ADF"
    version: str = "1.0.0"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    log_file: Optional[str] = None
    log_level: str = "INFO"
    json_logs: bool = False


def _enum_value(enum_cls, value, name):
    try:
        return enum_cls(value)
    except ValueError:
        allowed = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{name}: unknown value '{value}' (expected one of {allowed})")


class ConfigManager:
    """Configuration manager to handle application settings"""

    SECTIONS = ("model", "train", "data")

    def __init__(self, config_file: Optional[str] = None):
        self.config_file = config_file
        self.config = self.load_config()

    def load_config(self) -> AppConfig:
        """Load configuration from file and environment variables"""
        config = AppConfig()

        # Load from file if provided
        if self.config_file:
            if not Path(self.config_file).exists():
                raise ConfigError(f"Config file not found: {self.config_file}")
            config = self._load_from_file(self.config_file, config)

        # Override with environment variables
        config = self._load_from_env(config)

        return config

    def _load_from_file(self, file_path: str, config: AppConfig) -> AppConfig:
        """Load configuration from YAML or JSON file"""
        file_path = Path(file_path)

        with open(file_path, 'r') as f:
            if file_path.suffix.lower() in ['.yaml', '.yml']:
                file_config = yaml.safe_load(f)
            elif file_path.suffix.lower() == '.json':
                file_config = json.load(f)
            else:
                raise ConfigError(f"Unsupported config file format: {file_path.suffix}")

        if file_config:
            config = self._merge_config(config, file_config)

        return config

    def _load_from_env(self, config: AppConfig) -> AppConfig:
        """Load configuration from JIADF_* environment variables"""
        # Model config
        config.model.seed = int(os.getenv('JIADF_MODEL_SEED', config.model.seed))
        config.model.heads = int(os.getenv('JIADF_HEADS', config.model.heads))
        config.model.head_dim = int(os.getenv('JIADF_HEAD_DIM', config.model.head_dim))
        config.model.gate_hidden = int(os.getenv('JIADF_GATE_HIDDEN', config.model.gate_hidden))
        if os.getenv('JIADF_VARIANT'):
            config.model.fusion_variant = _enum_value(FusionVariant, os.getenv('JIADF_VARIANT'), "JIADF_VARIANT")
        if os.getenv('JIADF_MODALITIES'):
            config.model.modalities = parse_modalities(os.getenv('JIADF_MODALITIES'))

        # Train config
        config.train.epochs = int(os.getenv('JIADF_EPOCHS', config.train.epochs))
        config.train.batch_size = int(os.getenv('JIADF_BATCH_SIZE', config.train.batch_size))
        config.train.lr = float(os.getenv('JIADF_LR', config.train.lr))
        config.train.weight_decay = float(os.getenv('JIADF_WEIGHT_DECAY', config.train.weight_decay))
        config.train.seed = int(os.getenv('JIADF_SEED', config.train.seed))

        # App config
        config.log_file = os.getenv('JIADF_LOG_FILE', config.log_file)
        config.log_level = os.getenv('JIADF_LOG_LEVEL', config.log_level)
        config.json_logs = os.getenv('JIADF_JSON_LOGS', str(config.json_logs)).lower() == 'true'

        return config

    def _merge_config(self, config: AppConfig, file_config: Dict[str, Any]) -> AppConfig:
        """Merge file configuration with default config"""
        for section in self.SECTIONS:
            if section not in file_config:
                continue
            target = getattr(config, section)
            for key, value in (file_config[section] or {}).items():
                if hasattr(target, key):
                    setattr(target, key, value)
            # Re-run coercion of enum and tuple fields
            if section == "model":
                config.model = ModelConfig.from_dict(asdict(config.model))

        if 'app' in file_config:
            for key, value in file_config['app'].items():
                if hasattr(config, key) and key not in self.SECTIONS:
                    setattr(config, key, value)

        return config

    def get_config(self) -> AppConfig:
        """Get the loaded configuration"""
        return self.config

    def validate_config(self) -> bool:
        """Validate the configuration"""
        errors = validate_model_config(self.config.model)
        train = self.config.train

        if train.epochs < 0:
            errors.append("train.epochs must be >= 0")
        if train.batch_size < 1:
            errors.append("train.batch_size must be >= 1")
        if train.lr <= 0:
            errors.append("train.lr must be > 0")
        if train.weight_decay < 0:
            errors.append("train.weight_decay must be >= 0")
        if not 0.0 < train.val_fraction < 1.0:
            errors.append("train.val_fraction must lie in (0, 1)")
        if not 0.0 < train.plateau_factor < 1.0:
            errors.append("train.plateau_factor must lie in (0, 1)")

        if errors:
            raise ConfigError(f"Configuration validation failed: {'; '.join(errors)}")

        return True

    def save_config(self, file_path: str):
        """Save current configuration to file"""
        config_dict = {
            'app': {
                'app_name': self.config.app_name,
                'version': self.config.version,
                'log_file': self.config.log_file,
                'log_level': self.config.log_level,
                'json_logs': self.config.json_logs,
            },
            'model': self.config.model.to_dict(),
            'train': asdict(self.config.train),
            'data': asdict(self.config.data),
        }

        file_path = Path(file_path)
        if file_path.suffix.lower() in ['.yaml', '.yml']:
            with open(file_path, 'w') as f:
                yaml.safe_dump(config_dict, f, default_flow_style=False, sort_keys=False)
        elif file_path.suffix.lower() == '.json':
            with open(file_path, 'w') as f:
                json.dump(config_dict, f, indent=2)
        else:
            raise ConfigError(f"Unsupported config file format: {file_path.suffix}")


def validate_model_config(model: ModelConfig) -> List[str]:
    """Return every violation found in a model configuration"""
    errors = []
    for name in ("enc_hidden", "d_img", "d_meta", "d_joint", "heads", "head_dim", "gate_hidden"):
        if getattr(model, name) < 1:
            errors.append(f"model.{name} must be positive")
    for name in ("dc", "dd", "dm_raw"):
        if getattr(model, name) < 1:
            errors.append(f"model.{name} must be positive")
    if model.n_classes < 2:
        errors.append("model.n_classes must be >= 2")
    for name in ("lambda_joint", "lambda_img", "lambda_meta"):
        if getattr(model, name) < 0:
            errors.append(f"model.{name} must be >= 0")
    if not model.modalities:
        errors.append("model.modalities must not be empty")
    if model.class_weights is not None:
        if len(model.class_weights) != model.n_classes:
            errors.append(
                f"model.class_weights has {len(model.class_weights)} entries, expected {model.n_classes}"
            )
        elif any(w < 0 for w in model.class_weights):
            errors.append("model.class_weights must be non-negative")
    return errors


def init_config(config_file: Optional[str] = None) -> AppConfig:
    """Load and validate a configuration"""
    manager = ConfigManager(config_file)
    manager.validate_config()
    return manager.get_config()


# Example configuration file content
EXAMPLE_CONFIG_YAML = """
app:
  log_level: "INFO"
  json_logs: false

model:
  enc_hidden: 128
  d_img: 256
  d_meta: 256
  d_joint: 256
  heads: 4
  head_dim: 32
  gate_hidden: 32
  lambda_joint: 0.5
  lambda_img: 0.25
  lambda_meta: 0.25
  fusion_variant: "ji-adf"
  mmfa_variant: "full"
  modalities: "c+d+m"

train:
  epochs: 50
  batch_size: 16
  lr: 0.0001
  weight_decay: 0.00001
  val_fraction: 0.2
  plateau_factor: 0.5
  plateau_patience: 5
  min_lr: 0.000001

data:
  n_classes: 3
  snr_c: 3.0
  snr_d: 3.0
  snr_m: 3.0
  complementary: true
"""
