"""Configuration dataclasses and the ``key = value`` config-file parser."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    max_len: int  # L
    embed_dim: int  # d
    num_classes: int  # K, real classes only
    filters: int = 100  # n
    k_set: tuple = (2, 3, 4)
    lstm_dim: int = 100
    lstm_layers: int = 1
    dropout_blstm_input: float = 0.5
    dropout_before_softmax: float = 0.5
    use_batchnorm: bool = True
    extra_fake_class: bool = False

    def __post_init__(self):
        object.__setattr__(self, "k_set", tuple(int(k) for k in self.k_set))
        validate_model(self)

    @property
    def k_max(self) -> int:
        return max(self.k_set)

    @property
    def seq_len(self) -> int:
        """Length of the fused sequence fed to the BLSTM."""
        return self.max_len - self.k_max + 1

    @property
    def num_outputs(self) -> int:
        return self.num_classes + (1 if self.extra_fake_class else 0)


def validate_model(cfg: ModelConfig):
    if len(cfg.k_set) != 3 or len(set(cfg.k_set)) != 3:
        raise ConfigError("k_set needs three distinct window lengths", key="k_set")
    if min(cfg.k_set) < 1:
        raise ConfigError("window lengths must be >= 1", key="k_set")
    if cfg.max_len < cfg.k_max:
        raise ConfigError(f"max_len {cfg.max_len} is shorter than the widest window "
                          f"{cfg.k_max}", key="max_len")
    if cfg.filters != cfg.lstm_dim:
        raise ConfigError(f"filters ({cfg.filters}) must equal lstm_dim ({cfg.lstm_dim})",
                          key="filters")
    for name in ("embed_dim", "filters", "lstm_layers"):
        if getattr(cfg, name) < 1:
            raise ConfigError("must be >= 1", key=name)
    if cfg.num_classes < 2:
        raise ConfigError("need at least two classes", key="num_classes")
    for name in ("dropout_blstm_input", "dropout_before_softmax"):
        if not 0.0 <= getattr(cfg, name) < 1.0:
            raise ConfigError("dropout rate must lie in [0, 1)", key=name)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 10
    learning_rate: float = 1e-4
    rho: float = 0.9
    rms_eps: float = 1e-8
    clip_threshold: float = 0.5
    clip_mode: str = "sum"  # "sum" of per-parameter norms or "global" norm
    seed: int = 1
    eval_every: int = 1
    patience: int = 0  # 0 disables early stopping

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2", key="batch_size")
        if self.clip_threshold <= 0:
            raise ConfigError("clip threshold must be positive", key="clip_threshold")
        if self.clip_mode not in ("sum", "global"):
            raise ConfigError("clip_mode is 'sum' or 'global'", key="clip_mode")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive", key="learning_rate")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0", key="epochs")


@dataclass(frozen=True)
class GanConfig:
    max_len: int
    embed_dim: int
    c_g: int = 100
    p_g: float = 0.0
    latent_dim: int = 100
    seed: int = 1

    def __post_init__(self):
        if self.c_g < 4 or self.c_g % 4:
            raise ConfigError("c_g must be a positive multiple of 4", key="c_g")
        if not 0.0 <= self.p_g < 1.0:
            raise ConfigError("p_g must lie in [0, 1)", key="p_g")
        if self.h < 1 or self.w < 1:
            raise ConfigError(f"L={self.max_len}, d={self.embed_dim} give an empty "
                              f"first feature map", key="max_len")

    @property
    def h(self) -> int:
        return self.max_len // 4

    @property
    def w(self) -> int:
        return self.embed_dim // 4

    def fake_count(self, m: int) -> int:
        return int(round(m * self.p_g))


# ----------------------------------------------------------------------------
# flat run configuration


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_kset(s: str) -> tuple:
    parts = s.replace("{", "").replace("}", "").replace(",", " ").split()
    return tuple(int(p) for p in parts)


@dataclass
class RunConfig:
    # model
    max_len: int = 0  # 0 -> pick from the corpus
    len_percentile: float = 95.0
    embed_dim: int = 300
    filters: int = 100
    k_set: tuple = (2, 3, 4)
    lstm_dim: int = 100
    lstm_layers: int = 1
    dropout_blstm_input: float = 0.5
    dropout_before_softmax: float = 0.5
    use_batchnorm: bool = True
    # training
    batch_size: int = 50
    epochs: int = 10
    learning_rate: float = 1e-4
    rho: float = 0.9
    rms_eps: float = 1e-8
    clip_threshold: float = 0.5
    clip_mode: str = "sum"
    seed: int = 1
    eval_every: int = 1
    patience: int = 0
    # semi-supervised
    gan: bool = False
    c_g: int = 100
    p_g: float = 0.0
    latent_dim: int = 100
    # experiment
    repeats: int = 10
    folds: int = 10
    dataset: str = ""
    test_dataset: str = ""
    val_dataset: str = ""
    embeddings: str = ""
    out: str = "runs"
    metrics_file: str = ""

    def model_config(self, num_classes: int, max_len: int | None = None) -> ModelConfig:
        return ModelConfig(
            max_len=max_len or self.max_len, embed_dim=self.embed_dim,
            num_classes=num_classes, filters=self.filters, k_set=self.k_set,
            lstm_dim=self.lstm_dim, lstm_layers=self.lstm_layers,
            dropout_blstm_input=self.dropout_blstm_input,
            dropout_before_softmax=self.dropout_before_softmax,
            use_batchnorm=self.use_batchnorm, extra_fake_class=self.gan)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
            rho=self.rho, rms_eps=self.rms_eps, clip_threshold=self.clip_threshold,
            clip_mode=self.clip_mode, seed=self.seed if seed is None else seed,
            eval_every=self.eval_every, patience=self.patience)

    def gan_config(self, max_len: int, seed: int | None = None) -> GanConfig:
        return GanConfig(max_len=max_len, embed_dim=self.embed_dim, c_g=self.c_g,
                         p_g=self.p_g, latent_dim=self.latent_dim,
                         seed=self.seed if seed is None else seed)

    def items(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            yield f.name, value


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_PATH_KEYS = ("dataset", "test_dataset", "val_dataset", "embeddings")


def _convert(key, raw, line=None):
    f = _FIELDS.get(key)
    if f is None:
        raise ConfigError("unknown configuration key", key=key, line=line)
    kind = type(getattr(RunConfig(), key))
    try:
        if kind is bool:
            return _parse_bool(raw)
        if kind is tuple:
            return _parse_kset(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r}: {exc}", key=key, line=line) from None


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Returns {key: (value, line)}."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=lineno)
        key, value = (s.strip() for s in text.split("=", 1))
        key = key.replace("-", "_")
        values[key] = (_convert(key, value, lineno), lineno)
    return values


def parse_config(path=None, overrides=None, check_paths=False) -> RunConfig:
    """Resolve defaults < environment seed < file < command-line overrides."""
    resolved = {}
    lines = {}
    env_seed = os.environ.get("ACBLSTM_SEED")
    if env_seed is not None:
        resolved["seed"] = _convert("seed", env_seed)
    if path:
        for key, (value, lineno) in read_config_file(path).items():
            resolved[key] = value
            lines[key] = lineno
    for key, raw in (overrides or {}).items():
        key = key.replace("-", "_")
        resolved[key] = raw if not isinstance(raw, str) else _convert(key, raw)
        lines.pop(key, None)
    cfg = RunConfig(**resolved)
    validate_run(cfg, lines)
    if check_paths:
        for key in _PATH_KEYS:
            value = getattr(cfg, key)
            if value and not Path(value).is_file():
                raise ConfigError(f"file not found: {value}", key=key, line=lines.get(key))
    return cfg


def validate_run(cfg: RunConfig, lines=None):
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, key=key, line=lines.get(key))

    if cfg.filters != cfg.lstm_dim:
        fail("filters", f"filters ({cfg.filters}) must equal lstm_dim ({cfg.lstm_dim})")
    if len(cfg.k_set) != 3 or len(set(cfg.k_set)) != 3 or min(cfg.k_set) < 1:
        fail("k_set", "k_set needs three distinct positive window lengths")
    if cfg.max_len and cfg.max_len < max(cfg.k_set):
        fail("max_len", "max_len is shorter than the widest window")
    if not 0 < cfg.len_percentile <= 100:
        fail("len_percentile", "percentile must lie in (0, 100]")
    if cfg.repeats < 1:
        fail("repeats", "repeats must be >= 1")
    if cfg.folds < 2:
        fail("folds", "folds must be >= 2")
    if cfg.c_g < 4 or cfg.c_g % 4:
        fail("c_g", "c_g must be a positive multiple of 4")
    if not 0.0 <= cfg.p_g < 1.0:
        fail("p_g", "p_g must lie in [0, 1)")
    if cfg.gan and int(round(cfg.batch_size * cfg.p_g)) >= cfg.batch_size:
        fail("p_g", "p_g leaves no real examples in a batch")
    for key in ("dropout_blstm_input", "dropout_before_softmax"):
        if not 0.0 <= getattr(cfg, key) < 1.0:
            fail(key, "dropout rate must lie in [0, 1)")
    try:
        cfg.train_config()
    except ConfigError as exc:
        raise ConfigError(exc.reason, key=exc.key, line=lines.get(exc.key)) from None
