"""INI-style pipeline configuration with command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

DEFAULTS: dict[str, dict[str, object]] = {
    "paths": {
        "workdir": ".",
        "corpus_dir": "",
        "cache_dir": "",
        "checkpoint_dir": "",
        "report_dir": "",
    },
    "run": {
        "seed": None,
        "embedding_kind": "conv5",
    },
    "corpus": {
        "n_depressed": 60,
        "n_control": 60,
        "utterances_per_participant": 1,
        "dev_fraction": 0.3,
    },
    "vowel": {
        "batch_size": 64,
        "learning_rate": 0.001,
        "l2": 0.001,
        "max_epochs": 50,
        "patience": 0,
        "thresholds": "0,0.3,0.6,0.9",
    },
    "depression": {
        "hidden_size": 128,
        "learning_rate": 0.01,
        "l2": 0.001,
        "batch_size": 32,
        "n_epochs": 0,
        "max_steps": 300,
    },
    "explain": {
        "n_samples": 1000,
        "alpha": 1.0,
        "kernel_width": 0.25,
        "smooth_steps": 32,
    },
}


class ConfigError(ValueError):
    pass


def _coerce(section: str, key: str, raw):
    default = DEFAULTS[section][key]
    if raw is None or isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if key == "seed":
            return int(text)
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r}") from None
    return text


@dataclass
class PipelineConfig:
    values: dict[str, dict[str, object]] = field(
        default_factory=lambda: {s: dict(v) for s, v in DEFAULTS.items()}
    )

    @classmethod
    def load(cls, path=None, overrides: dict[str, object] | None = None) -> "PipelineConfig":
        """Defaults, then the file (if any), then ``overrides`` keyed "section.key"."""
        cfg = cls()
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            parser = configparser.ConfigParser()
            parser.read(path, encoding="utf-8")
            for section in parser.sections():
                for key, raw in parser.items(section):
                    cfg.set(section, key, raw)
        for dotted, raw in (overrides or {}).items():
            if raw is None:
                continue
            section, _, key = dotted.partition(".")
            cfg.set(section, key, raw)
        return cfg

    def set(self, section: str, key: str, raw) -> None:
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = _coerce(section, key, raw)

    def __getitem__(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    @property
    def seed(self) -> int | None:
        return self.values["run"]["seed"]

    def path(self, name: str) -> Path:
        paths = self.values["paths"]
        root = Path(paths["workdir"])
        sub = {"corpus_dir": "data", "cache_dir": "cache", "checkpoint_dir": "checkpoints", "report_dir": "reports"}
        return Path(paths[name]) if paths[name] else root / sub[name]

    @property
    def thresholds(self) -> list[float]:
        return [float(t) for t in str(self["vowel.thresholds"]).split(",") if t.strip()]

    def dump(self) -> str:
        lines = []
        for section, entries in self.values.items():
            lines.append(f"[{section}]")
            for key, value in entries.items():
                lines.append(f"{key} = {'' if value is None else value}")
            lines.append("")
        return "\n".join(lines)
