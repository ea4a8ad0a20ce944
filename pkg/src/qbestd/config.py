"""Experiment configuration: flat INI files with [section] headers,
typed into one ExperimentConfig. Command-line flags override file keys.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import SyntheticCorpusConfig
from .errors import ConfigError

ARCHITECTURES = ("ffn", "resnet", "raw")


@dataclass
class ExperimentConfig:
    # model
    architecture: str = "ffn"
    languages: list = field(default_factory=list)  # empty = all corpus languages
    hidden_dim: int = 1024
    dropout: float = 0.1
    epochs: int = 12
    batch_size: int = 255
    lr: float = 1e-3
    # frontend
    context_left: int = 6
    context_right: int = 6
    image_left: int = 12
    image_right: int = 12
    # search
    max_consecutive_nondiagonal: int = 2
    # sad
    sad_bias: float = 0.0
    min_frames: int = 10
    # eval
    cost_false_alarm: float = 1.0
    cost_miss: float = 100.0
    target_prior: float | None = None
    # run
    seed: int = 0
    threads: int = 1
    corpus: SyntheticCorpusConfig = field(default_factory=SyntheticCorpusConfig)

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; "
                f"choose one of {', '.join(ARCHITECTURES)}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch size must be positive")
        if self.threads < 1:
            raise ConfigError("thread count must be positive")
        if self.needs_training and self.hidden_dim < 33:
            raise ConfigError("hidden dim must exceed the 32-wide bottleneck")
        # the run seed drives every stochastic stage, corpus included
        self.corpus.seed = self.seed

    @property
    def needs_training(self) -> bool:
        return self.architecture in ("ffn", "resnet")


_SECTION_FIELDS = {
    "model": {
        "architecture": str,
        "languages": "langs",
        "hidden_dim": int,
        "dropout": float,
        "epochs": int,
        "batch_size": int,
        "lr": float,
    },
    "frontend": {
        "context_left": int,
        "context_right": int,
        "image_left": int,
        "image_right": int,
    },
    "search": {"max_consecutive_nondiagonal": int},
    "sad": {"sad_bias": float, "min_frames": int},
    "eval": {
        "cost_false_alarm": float,
        "cost_miss": float,
        "target_prior": "opt_float",
    },
    "run": {"seed": int, "threads": int},
}

_CORPUS_TYPES = {
    "num_languages": int, "phones_per_language": int,
    "shared_phone_fraction": float, "feature_dim": int,
    "train_utterances": int, "dev_utterances": int,
    "doc_count": int, "query_count": int, "plant_rate": float,
    "min_phone_frames": int, "max_phone_frames": int,
    "doc_min_phones": int, "doc_max_phones": int,
    "query_min_phones": int, "query_max_phones": int,
    "mean_scale": float, "noise_scale": float,
    "silence_rate": float, "silence_min_frames": int,
    "silence_max_frames": int, "seed": int,
}


def read_config_file(path) -> dict:
    """INI file -> {section: {key: raw string}}. Unknown sections or
    keys are configuration errors, not silent no-ops.
    """
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}")
    raw = {}
    for section in parser.sections():
        if section != "corpus" and section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        known = _CORPUS_TYPES if section == "corpus" else _SECTION_FIELDS[section]
        raw[section] = {}
        for key, value in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            raw[section][key] = value
    return raw


def _convert(section: str, key: str, value: str, kind):
    try:
        if kind is str:
            return value
        if kind == "langs":
            return [part.strip() for part in value.split(",") if part.strip()]
        if kind == "opt_float":
            return float(value) if value.strip() else None
        return kind(value)
    except ValueError:
        raise ConfigError(f"bad value for [{section}] {key}: {value!r}")


def build_experiment(raw: dict | None = None, overrides: dict | None = None
                     ) -> ExperimentConfig:
    """Typed config from raw file sections plus CLI overrides, which
    take precedence. Overrides use dotted keys ("run.seed").
    """
    raw = {sect: dict(keys) for sect, keys in (raw or {}).items()}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        raw.setdefault(section, {})[key] = str(value)

    kwargs = {}
    for section, keys in raw.items():
        if section == "corpus":
            continue
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in keys.items():
            kind = _SECTION_FIELDS[section].get(key)
            if kind is None:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            kwargs[key] = _convert(section, key, value, kind)

    corpus_kwargs = {}
    for key, value in raw.get("corpus", {}).items():
        kind = _CORPUS_TYPES.get(key)
        if kind is None:
            raise ConfigError(f"unknown key {key!r} in section [corpus]")
        corpus_kwargs[key] = _convert("corpus", key, value, kind)
    kwargs["corpus"] = SyntheticCorpusConfig(**corpus_kwargs)
    return ExperimentConfig(**kwargs)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the full typed configuration."""
    from dataclasses import asdict

    payload = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def load_experiment(config_path=None, overrides: dict | None = None
                    ) -> ExperimentConfig:
    raw = read_config_file(config_path) if config_path else {}
    return build_experiment(raw, overrides)


def write_config_template(path) -> None:
    """Commented template with every key at its default value."""
    cfg = ExperimentConfig()
    lines = ["# qbestd experiment configuration", ""]
    sections: dict = {
        "corpus": {k: getattr(cfg.corpus, k) for k in _CORPUS_TYPES
                   if k != "seed"},
    }
    for section, keys in _SECTION_FIELDS.items():
        values = {}
        for key in keys:
            value = getattr(cfg, key)
            if key == "languages":
                value = ",".join(value) if value else ""
            if value is None:
                value = ""
            values[key] = value
        sections[section] = values
    for section, values in sections.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
