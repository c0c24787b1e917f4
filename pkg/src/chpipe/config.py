"""INI-style pipeline configuration.

One file with sections [paths], [levelset], [init], [matching], [forest],
and [synth] drives every CLI stage.  Unknown sections or keys are rejected
outright, and every value is validated against the owning dataclass's
bounds, so a typo fails fast as a config error instead of silently running
with a default.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .levelset import LevelSetParams
from .synth import SynthSpec


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = ""  # empty: <out>/data


@dataclass(frozen=True)
class InitConfig:
    dark_quantile: float = 0.25
    unipolarity_min: float = 0.6
    external_masks: tuple[str, ...] = ("ext_method",)
    selector: bool = True
    hh_trees: int = 50
    hh_splits: int = 50
    ext_trees: int = 30
    ext_splits: int = 50
    train_fraction: float = 0.7
    overlap_valid: float = 0.3

    def __post_init__(self):
        if not (0.0 < self.dark_quantile < 1.0):
            raise ValueError("dark_quantile must lie in (0, 1)")
        if not (0.0 <= self.unipolarity_min <= 1.0):
            raise ValueError("unipolarity_min must lie in [0, 1]")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class MatchSection:
    threshold_arc: float = 0.1
    mahalanobis_threshold: float = 3.034854
    fit_mahalanobis: bool = True
    close_radius: int = 1
    reference: str = "consensus"
    polar_lat: float = 60.0

    def __post_init__(self):
        if self.threshold_arc < 0:
            raise ValueError("threshold_arc must be >= 0")
        if self.mahalanobis_threshold <= 0:
            raise ValueError("mahalanobis_threshold must be positive")
        if self.close_radius < 0:
            raise ValueError("close_radius must be >= 0")
        if self.reference not in ("consensus", "segmentation"):
            raise ValueError("reference must be 'consensus' or 'segmentation'")


@dataclass(frozen=True)
class ForestSection:
    n_trees: int = 20
    max_depth: int = 11
    min_leaf: int = 1
    include_same_area: bool = True
    spherical_areas: bool = False
    oob_trees: tuple[int, ...] = (5, 10, 20, 40)
    oob_depths: tuple[int, ...] = (3, 7, 11)
    train_fraction: float = 0.7

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("forest sizes must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    levelset: LevelSetParams = field(default_factory=LevelSetParams)
    init: InitConfig = field(default_factory=InitConfig)
    matching: MatchSection = field(default_factory=MatchSection)
    forest: ForestSection = field(default_factory=ForestSection)
    synth: SynthSpec = field(default_factory=SynthSpec)


_SECTION_TYPES = {
    "paths": PathsConfig,
    "levelset": LevelSetParams,
    "init": InitConfig,
    "matching": MatchSection,
    "forest": ForestSection,
    "synth": SynthSpec,
}

# config key "lambda" maps to the LevelSetParams field "lam"
_KEY_ALIASES = {("levelset", "lambda"): "lam"}
_FIELD_ALIASES = {("levelset", "lam"): "lambda"}


def _parse_value(raw: str, annotation):
    raw = raw.strip()
    if annotation in (int, "int"):
        return int(raw)
    if annotation in (float, "float"):
        return float(raw)
    if annotation in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if annotation in (str, "str"):
        return raw
    ann = str(annotation)
    if "int | None" in ann:
        return None if raw.lower() in ("", "none") else int(raw)
    if "tuple[str" in ann:
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if "tuple[int" in ann:
        return tuple(int(s) for s in raw.split(",") if s.strip())
    if "tuple[float" in ann:
        return tuple(float(s) for s in raw.split(",") if s.strip())
    raise ValueError(f"unsupported config value type {annotation!r}")


def load_config(path=None) -> PipelineConfig:
    """Read a config file, or return all defaults when path is None."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    kwargs = {}
    for section in parser.sections():
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section}]")
        cls = _SECTION_TYPES[section]
        by_name = {f.name: f for f in fields(cls)}
        section_kwargs = {}
        for key, raw in parser.items(section):
            name = _KEY_ALIASES.get((section, key), key)
            if name not in by_name:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            try:
                section_kwargs[name] = _parse_value(raw, by_name[name].type)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
        try:
            kwargs[section] = cls(**section_kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return PipelineConfig(**kwargs)


def save_config(cfg: PipelineConfig, path) -> None:
    """Write every section and value, aliases applied, in a stable order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for section, obj in (
        ("paths", cfg.paths),
        ("levelset", cfg.levelset),
        ("init", cfg.init),
        ("matching", cfg.matching),
        ("forest", cfg.forest),
        ("synth", cfg.synth),
    ):
        lines.append(f"[{section}]")
        for f in fields(obj):
            key = _FIELD_ALIASES.get((section, f.name), f.name)
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            if value is None:
                value = "none"
            lines.append(f"{key} = {value}")
        lines.append("")
    path.write_text("\n".join(lines))
