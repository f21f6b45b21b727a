"""Run configuration: one sectioned INI file per run, typed against defaults."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass

from .errors import ConfigError
from .samplers import SCHEMES, SamplerConfig
from .training import TrainConfig

ROUTES = {"s2": 3, "so3-es": 6, "so3-em": 6}
TARGET_KINDS = ("uniform", "vmf", "wrapped", "csv", "samples")

DEFAULTS: dict[str, dict[str, object]] = {
    "run": {"route": "s2", "seed": 0, "threads": 1},
    "target": {"kind": "vmf", "components": 8, "concentration": 256.0, "count": 20000, "path": ""},
    "net": {"hidden": "128,128,128", "activation": "tanh", "score_activation": "tanh",
            "time_freqs": 4, "train_score": True},
    "train": {"iterations": 5000, "batch_size": 512, "learning_rate": 3e-3, "weight_decay": 0.0,
              "lr_step": 2500, "lr_gamma": 0.7, "eval_every": 10},
    "sample": {"scheme": "ode-rk4", "steps": 100, "epsilon": 0.0, "count": 2048, "direction": "forward"},
    "eval": {"max_n": 2048, "k": 5, "nll": False, "nll_steps": 100, "nll_count": 1000},
    "bench": {"schemes": "esde-em,esde-heun,grw", "epsilon": 0.5, "steps": "16,32,64,128,256,512",
              "grw_steps": "2,4,8,16", "paths": 10000, "grw_paths": 1000000},
}


def _coerce(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def int_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


@dataclass
class RunConfig:
    values: dict[str, dict[str, object]]

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def route(self) -> str:
        return str(self.values["run"]["route"])

    @property
    def seed(self) -> int:
        return int(self.values["run"]["seed"])

    @property
    def ambient_dim(self) -> int:
        return ROUTES[self.route]

    @property
    def hidden(self) -> list[int]:
        return int_list(str(self.values["net"]["hidden"]))

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(seed=self.seed + 1, **t)

    def sampler_config(self) -> SamplerConfig:
        s = self.values["sample"]
        return SamplerConfig(scheme=s["scheme"], steps=s["steps"], epsilon=s["epsilon"],
                             seed=self.seed + 3, direction=s["direction"],
                             threads=self.values["run"]["threads"])

    def to_ini(self) -> str:
        lines = []
        for section, kv in self.values.items():
            lines.append(f"[{section}]")
            for key, val in kv.items():
                text = str(val).lower() if isinstance(val, bool) else (repr(val) if isinstance(val, float) else str(val))
                lines.append(f"{key} = {text}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:12]

    def validate(self) -> None:
        if self.route not in ROUTES:
            raise ConfigError(f"unknown route {self.route!r}; choose from {', '.join(ROUTES)}")
        kind = self["target"]["kind"]
        if kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {kind!r}")
        if self.route == "s2" and kind == "wrapped":
            raise ConfigError("wrapped Gaussian targets live on SO(3); use route so3-es or so3-em")
        if self.route != "s2" and kind in ("vmf", "csv"):
            raise ConfigError(f"target kind {kind} lives on S^2; use route s2")
        if kind in ("csv", "samples") and not self["target"]["path"]:
            raise ConfigError(f"target kind {kind} needs target.path")
        if self["target"]["count"] < 1 or self["target"]["components"] < 1:
            raise ConfigError("target.count and target.components must be positive")
        if not self.hidden:
            raise ConfigError("net.hidden needs at least one layer width")
        if self["run"]["threads"] < 1:
            raise ConfigError("run.threads must be at least 1")
        if self["sample"]["count"] < 1:
            raise ConfigError("sample.count must be positive")
        for name in str(self["bench"]["schemes"]).split(","):
            if name.strip() not in SCHEMES:
                raise ConfigError(f"unknown bench scheme {name!r}")
        self.train_config()
        self.sampler_config()


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Read an INI file (optional) and ``section.key=value`` overrides."""
    values = {sec: dict(kv) for sec, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[section][key] = _coerce(section, key, raw)
    for item in overrides or []:
        name, sep, raw = item.partition("=")
        section, dot, key = name.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {name.strip()}")
        values[section][key] = _coerce(section, key, raw)
    cfg = RunConfig(values)
    cfg.validate()
    return cfg
