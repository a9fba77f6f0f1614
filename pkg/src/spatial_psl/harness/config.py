"""INI experiment configuration with field-level validation."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..inference import SolverConfig
from ..matching import MatchConfig
from ..nn.losses import DistillConfig
from ..nn.train import TrainConfig
from ..scenes import MODES, SceneConfig

__all__ = ["ConfigError", "DataConfig", "ExperimentConfig", "ModelConfig", "load_config", "parse_config"]

SWEEP_PIS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.575, 0.6, 0.7, 0.8, 0.9)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending ``section.key``."""


@dataclass(frozen=True)
class DataConfig:
    mode: str = "sort-of-clevr"
    train_scenes: int = 9800
    val_scenes: int = 200
    test_scenes: int = 200
    questions_per_scene: int = 10
    image_size: int = 64
    radius: int = 5
    min_gap: int = 2

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in ("train_scenes", "val_scenes", "test_scenes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.questions_per_scene < 1:
            raise ValueError("questions_per_scene must be >= 1")

    def scene_config(self) -> SceneConfig:
        return SceneConfig(image_size=self.image_size, radius=self.radius, min_gap=self.min_gap)

    def splits(self) -> dict[str, int]:
        return {"train": self.train_scenes, "val": self.val_scenes, "test": self.test_scenes}


@dataclass(frozen=True)
class ModelConfig:
    grid: int = 8
    embed_dim: int = 32
    g_widths: tuple[int, ...] = (64, 64, 64, 64)
    f_widths: tuple[int, ...] = (64, 64, 32)
    encoding: str = "onehot"

    def __post_init__(self):
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if self.encoding not in ("onehot", "bow"):
            raise ValueError(f"unknown encoding {self.encoding!r}")
        if len(self.g_widths) != 4:
            raise ValueError("g needs exactly four layer widths")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    variant: str = "baseline"
    strict: bool = False
    sweep_pis: tuple[float, ...] = SWEEP_PIS
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    match: MatchConfig = field(default_factory=MatchConfig)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return replace(self, seed=seed, train=replace(self.train, seed=seed))

    def match_config(self) -> MatchConfig:
        return replace(self.match, solver=self.solver)

    def to_ini(self) -> str:
        """Canonical text form; parsing it back gives an equal config."""
        lines = ["[experiment]"]
        lines += [f"seed = {self.seed}", f"variant = {self.variant}", f"strict = {str(self.strict).lower()}"]
        lines.append("sweep_pis = " + ", ".join(repr(p) for p in self.sweep_pis))
        for name in _SECTIONS:
            obj = getattr(self, name)
            lines += ["", f"[{name}]"]
            for f in fields(obj):
                if name == "match" and f.name == "solver":
                    continue
                lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "distill": DistillConfig,
    "solver": SolverConfig,
    "match": MatchConfig,
}
_EXPERIMENT_KEYS = {"seed": int, "variant": str, "strict": bool, "sweep_pis": (float,)}
VARIANTS = ("baseline", "teacher-external-mask", "teacher-attention", "student-external", "student-attention")


def _format(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(text: str, kind, where: str):
    text = text.strip()
    try:
        if isinstance(kind, tuple):
            return tuple(_convert(t, kind[0], where) for t in text.split(",") if t.strip())
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "int|none":
            return None if text.lower() == "none" else int(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _field_kind(f, default):
    if isinstance(default, bool):
        return bool
    if isinstance(default, tuple):
        return (type(default[0]) if default else int,)
    if default is None:
        return "int|none"
    return type(default)


def _build(cls, section: str, items: dict[str, str]):
    defaults = cls()
    known = {f.name: f for f in fields(cls) if not (cls is MatchConfig and f.name == "solver")}
    kwargs = {}
    for key, text in items.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown key")
        kwargs[key] = _convert(text, _field_kind(known[key], getattr(defaults, key)), f"{section}.{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse INI text. Missing sections and keys take their defaults.

    Raises:
        ConfigError: unknown section or key, unparsable value, or a value
            rejected by the section's own validation.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    parts = {}
    top = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "experiment":
            for key, value in items.items():
                if key not in _EXPERIMENT_KEYS:
                    raise ConfigError(f"experiment.{key}: unknown key")
                top[key] = _convert(value, _EXPERIMENT_KEYS[key], f"experiment.{key}")
        elif section in _SECTIONS:
            parts[section] = _build(_SECTIONS[section], section, items)
        else:
            raise ConfigError(f"{section}: unknown section")
    variant = top.get("variant", "baseline")
    if variant not in VARIANTS:
        raise ConfigError(f"experiment.variant: must be one of {', '.join(VARIANTS)}")
    pis = top.get("sweep_pis", SWEEP_PIS)
    if not pis or any(not 0 <= p <= 1 for p in pis):
        raise ConfigError("experiment.sweep_pis: values must lie in [0, 1]")
    cfg = ExperimentConfig(**top, **parts)
    if "train" not in parts or "seed" not in dict(parser.items("train")):
        cfg = replace(cfg, train=replace(cfg.train, seed=cfg.seed))
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config(text, str(path))
