"""Run configuration.

Precedence, lowest to highest: dataclass defaults, JSON file, the
``VERSA_SEED`` environment variable, explicit overrides (CLI flags).
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

from .checkpoint import hash_config
from .errors import CompatibilityError, ConfigError
from .motion import FEATURE_DIM

SEED_ENV = "VERSA_SEED"
FUSION_MODES = ("per_layer", "last_layer", "none")


@dataclass
class TokenizerConfig:
    codebook_size: int = 512
    code_dim: int = 512
    downsample: int = 4
    hidden: int = 512
    beta: float = 0.25
    gamma: float = 0.99
    reset_threshold: float = 1.0
    ema_eps: float = 1e-5


@dataclass
class GeneratorConfig:
    layers: int = 8
    heads: int = 6
    width: int = 384
    text_width: int = 512
    window_tokens: int = 16
    overlap_tokens: int = 2
    mask_ratio_min: float = 0.2
    mask_ratio_max: float = 0.9
    sampling: str = "greedy"
    temperature: float = 1.0
    fusion: str = "per_layer"


@dataclass
class AudioConfig:
    sample_rate: int = 16000
    n_mels: int = 80
    win_length: int = 400
    hop_length: int = 160
    token_width: int = 256


@dataclass
class TrainingConfig:
    lr: float = 2e-4
    batch_size: int = 32
    window_frames: int = 64
    vqvae_steps: int = 2000
    text_steps: int = 2000
    audio_steps: int = 2000
    clip_norm: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    log_every: int = 100


@dataclass
class DataConfig:
    families: list = field(default_factory=lambda: [
        "still", "wave_right_hand", "walk_forward", "jump", "squat", "raise_both_arms"])
    samples_per_family: int = 100
    frames: int = 64
    split: list = field(default_factory=lambda: [0.8, 0.05, 0.15])
    audio_gain: float = 0.02


@dataclass
class EvalConfig:
    feature_dim: int = 64
    batch_size: int = 32
    mmodality_samples: int = 30
    mmodality_pairs: int = 10
    diversity_pairs: int = 300
    temperature: float = 1.0
    fit_text_head: bool = True
    protocol_version: str = "1"


@dataclass
class PathsConfig:
    corpus: str = "corpus"
    runs: str = "runs"


@dataclass
class RunConfig:
    """
    Every hyperparameter of a run.

    The config is persisted verbatim into each checkpoint; its hash is
    embedded in every artifact.
    """

    seed: int = 1234
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    audio: AudioConfig = field(default_factory=AudioConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, values):
        return _build(cls, values, "config")

    def config_hash(self):
        return hash_config(self.to_dict())

    def model_signature(self):
        """Fields that must agree between a checkpoint and the active config."""
        return {
            "codebook_size": self.tokenizer.codebook_size,
            "code_dim": self.tokenizer.code_dim,
            "downsample": self.tokenizer.downsample,
            "hidden": self.tokenizer.hidden,
            "layers": self.generator.layers,
            "heads": self.generator.heads,
            "width": self.generator.width,
            "text_width": self.generator.text_width,
            "token_width": self.audio.token_width,
            "n_mels": self.audio.n_mels,
            "feature_dim": FEATURE_DIM,
        }

    def validate(self):
        """
        Check value ranges.

        Raises:
            ConfigError: On the first invalid value
        """
        tok, gen = self.tokenizer, self.generator
        if tok.codebook_size < 1 or tok.code_dim < 1 or tok.downsample != 4:
            raise ConfigError("tokenizer needs codebook_size, code_dim >= 1 and downsample 4")
        if tok.beta <= 0:
            raise ConfigError(f"beta must be positive, got {tok.beta}")
        if not 0.0 <= tok.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {tok.gamma}")
        if gen.width % gen.heads:
            raise ConfigError(f"generator width {gen.width} is not divisible by {gen.heads} heads")
        if not 0.0 < gen.mask_ratio_min <= gen.mask_ratio_max < 1.0:
            raise ConfigError("mask ratio range must satisfy 0 < min <= max < 1")
        if not 0 <= gen.overlap_tokens < gen.window_tokens:
            raise ConfigError("overlap_tokens must be smaller than window_tokens")
        if gen.sampling not in ("greedy", "categorical"):
            raise ConfigError(f"unknown sampling strategy {gen.sampling!r}")
        if gen.fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {gen.fusion!r}, expected one of {FUSION_MODES}")
        if not (0.0 <= self.training.adam_beta1 < 1.0 and 0.0 <= self.training.adam_beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.training.window_frames % tok.downsample:
            raise ConfigError("window_frames must be a multiple of the downsampling rate")
        if self.audio.sample_rate != 16000:
            raise ConfigError("only 16 kHz audio is supported")
        if abs(sum(self.data.split) - 1.0) > 1e-9 or len(self.data.split) != 3:
            raise ConfigError(f"split ratios must be three values summing to 1, got {self.data.split}")
        if len(set(self.data.families)) < 4:
            raise ConfigError("at least four distinct motion families are required")
        return self


def _build(cls, values, where):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def apply_overrides(config, overrides):
    """
    Return a copy with dotted-path overrides applied, e.g. ``{"training.lr": 1e-3}``.

    Raises:
        ConfigError: If a path does not name a config field
    """
    values = config.to_dict()
    for path, value in overrides.items():
        if value is None:
            continue
        node, keys = values, path.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config path {path}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config path {path}")
        node[keys[-1]] = value
    return RunConfig.from_dict(values)


def load_config(path=None, overrides=None, environ=None):
    """
    Build the active configuration.

    Args:
        path (str): Optional JSON file
        overrides (dict): Dotted-path overrides from the command line
        environ (dict): Environment, defaults to ``os.environ``

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: On unreadable JSON, unknown keys or invalid values
    """
    config = RunConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = RunConfig.from_dict(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}")
    environ = os.environ if environ is None else environ
    if environ.get(SEED_ENV):
        try:
            config = replace(config, seed=int(environ[SEED_ENV]))
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}")
    if overrides:
        config = apply_overrides(config, overrides)
    return config.validate()


def check_signature(config, checkpoint_config, what="checkpoint"):
    """
    Compare the model signature of a stored config against the active one.

    Raises:
        CompatibilityError: Naming the first differing field
    """
    stored = RunConfig.from_dict(checkpoint_config).model_signature()
    active = config.model_signature()
    for key in sorted(active):
        if stored.get(key) != active[key]:
            raise CompatibilityError(
                f"{what} was built with {key}={stored.get(key)}, active config has {active[key]}")
