"""Flat dotted-key run configuration.

A config file holds ``key = value`` lines with ``#`` comments. Keys name a
section and a field, e.g. ``scene.noise_sigma`` or ``train.lr``. Values are
parsed against the type of the default, tuples are comma separated and
``none`` clears an optional value. Unknown keys are an error.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any

from .detector.boxes import AnchorConfig
from .detector.model import ModelConfig
from .detector.train import TrainConfig
from .radiometry.clip import GenConfig
from .radiometry.physics import SceneConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# fields that are taken from the data or from --seed rather than from the file
_DERIVED = {"model": {"image_size", "frames", "anchors"}, "train": {"frames", "seed"}}

SECTIONS = {
    "gen": GenConfig,
    "scene": SceneConfig,
    "model": ModelConfig,
    "anchors": AnchorConfig,
    "train": TrainConfig,
}

TOP_LEVEL = {"seed": 0, "n_clips": 250, "variant": "vsf_full"}


def _defaults() -> dict[str, Any]:
    out = dict(TOP_LEVEL)
    for sec, cls in SECTIONS.items():
        inst = cls()
        for f in dataclasses.fields(cls):
            if f.name in _DERIVED.get(sec, ()):
                continue
            out[f"{sec}.{f.name}"] = getattr(inst, f.name)
    return out


DEFAULTS = _defaults()


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key: str, text: str):
    default = DEFAULTS[key]
    s = text.strip()
    try:
        if s.lower() == "none":
            if default is None:
                return None
            raise ValueError("this key cannot be none")
        if isinstance(default, bool):
            if s.lower() in ("true", "1", "yes"):
                return True
            if s.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true or false")
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float) or default is None:
            return float(s)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in s.split(",") if x.strip())
        return s
    except ValueError as exc:
        raise ConfigError(f"bad value {text!r} for {key}: {exc}") from None


@dataclasses.dataclass
class RunConfig:
    values: dict[str, Any] = dataclasses.field(default_factory=lambda: dict(DEFAULTS))

    def set(self, key: str, text: str) -> None:
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = parse_value(key, text)

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict[str, Any]:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    # typed views
    def gen(self) -> GenConfig:
        return GenConfig(**self.section("gen"))

    def scene(self) -> SceneConfig:
        return SceneConfig(**self.section("scene"))

    def model(self, image_size: int, frames: int) -> ModelConfig:
        return ModelConfig(image_size=image_size, frames=frames, anchors=AnchorConfig(**self.section("anchors")),
                           **self.section("model"))

    def train(self, frames: int) -> TrainConfig:
        return TrainConfig(frames=frames, seed=self["seed"], **self.section("train"))

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in sorted(self.values))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def parse_text(text: str, cfg: RunConfig | None = None, origin: str = "<config>") -> RunConfig:
    cfg = cfg or RunConfig()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected key = value")
        k, v = line.split("=", 1)
        try:
            cfg.set(k, v)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{n}: {exc}") from None
    return cfg


def load(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the file, then ``key=value`` overrides, then an explicit seed."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        parse_text(p.read_text(), cfg, str(p))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        cfg.set(k, v)
    if seed is not None:
        cfg.values["seed"] = int(seed)
    # construct every typed view once so invalid combinations fail early
    cfg.gen()
    cfg.scene()
    AnchorConfig(**cfg.section("anchors"))
    log.info("resolved config:\n%s", cfg.dumps())
    return cfg
