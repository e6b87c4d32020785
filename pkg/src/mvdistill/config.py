"""Run configuration: schema, TOML parsing, env overrides, serialization.

A run is described by a TOML file with the sections ``[run]``,
``[generator]``, ``[schedule]``, ``[score]``, ``[mirror]`` and
``[grid]``.  Only ``generator.kind`` and ``score.source`` are required;
every other key has a documented default (see ``DEFAULTS``).  Unknown
sections or keys are rejected, and every error names the exact key path.

Environment overrides: ``DISTILL_<SECTION>__<KEY>=<toml value>``
(for example ``DISTILL_RUN__SEED=7`` or
``DISTILL_MIRROR__RANK_WEIGHTS=[1.0,0.5,0.25,0.0]``) replaces the
corresponding file value before validation.

An empty ``rank_weights`` list disables rank weighing for that phase.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ENV_PREFIX = "DISTILL_"

_REQUIRED = object()

# section -> key -> (type tag, default); tags: int, float, str, bool, float_list
_SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "run": {
        "iterations": ("int", 10_000),
        "seed": ("int", 0),
        "learning_rate": ("float", 1e-4),
        "checkpoint_every": ("int", 0),
        "phase_schedule": ("str", "interleaved"),
        "interleave_k": ("int", 1),
    },
    "generator": {
        "kind": ("str", _REQUIRED),
        "channels": ("int", 4),
        "height": ("int", 16),
        "width": ("int", 16),
        "latent_dim": ("int", 8),
        "truncation_psi": ("float", 0.8),
        "sr": ("str", "bilinear"),
        "init": ("str", "normal"),
        "init_scale": ("float", 0.3),
        "init_value": ("float", 0.0),
        "symmetric_init": ("bool", True),
        "pose_radius": ("float", 1.0),
        "pitch_limit": ("float", 0.4),
    },
    "schedule": {
        "steps": ("int", 1000),
        "beta_lo": ("float", 1e-4),
        "beta_hi": ("float", 2e-2),
    },
    "score": {
        "source": ("str", _REQUIRED),
        "prompt": ("str", ""),
        "negative_prompt": ("str", ""),
        "cfg_weight": ("float", 7.5),
        "control_weight": ("float", 1.0),
        "var0": ("float", 1.0),
        "mean": ("str", "zeros"),
        "mean_value": ("float", 0.0),
        "mean_seed": ("int", 0),
        "mean_scale": ("float", 1.0),
        "gmm_means": ("float_list", (-2.0, 2.0)),
        "gmm_weights": ("float_list", (0.5, 0.5)),
        "backend_addr": ("str", "127.0.0.1:9000"),
        "timeout_s": ("float", 10.0),
    },
    "mirror": {
        "enabled": ("bool", True),
        "t_lo": ("float", 0.70),
        "t_hi": ("float", 0.96),
        "rank_weights": ("float_list", (1.0, 0.75, 0.5, 0.25)),
        "average": ("bool", False),
    },
    "grid": {
        "enabled": ("bool", False),
        "t_lo": ("float", 0.30),
        "t_hi": ("float", 0.80),
        "tap": ("str", "pre_sr"),
        "rank_weights": ("float_list", (1.0, 0.75, 0.5, 0.25)),
        "pose_mode": ("str", "independent"),
    },
}


@dataclass(frozen=True)
class RunSection:
    iterations: int = 10_000
    seed: int = 0
    learning_rate: float = 1e-4
    checkpoint_every: int = 0
    phase_schedule: str = "interleaved"
    interleave_k: int = 1

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"run.iterations must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"run.learning_rate must be > 0, got {self.learning_rate}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"run.checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.phase_schedule not in ("interleaved", "sequential"):
            raise ConfigError(
                f"run.phase_schedule must be 'interleaved' or 'sequential', got {self.phase_schedule!r}"
            )
        if self.interleave_k < 1:
            raise ConfigError(f"run.interleave_k must be >= 1, got {self.interleave_k}")


@dataclass(frozen=True)
class GeneratorSection:
    kind: str
    channels: int = 4
    height: int = 16
    width: int = 16
    latent_dim: int = 8
    truncation_psi: float = 0.8
    sr: str = "bilinear"
    init: str = "normal"
    init_scale: float = 0.3
    init_value: float = 0.0
    symmetric_init: bool = True
    pose_radius: float = 1.0
    pitch_limit: float = 0.4

    def __post_init__(self) -> None:
        if self.kind not in ("direct_image", "symmetric_toy"):
            raise ConfigError(f"generator.kind must be 'direct_image' or 'symmetric_toy', got {self.kind!r}")
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError("generator.channels/height/width must be positive")
        if self.latent_dim < 0:
            raise ConfigError(f"generator.latent_dim must be >= 0, got {self.latent_dim}")
        if not 0.0 < self.truncation_psi <= 1.0:
            raise ConfigError(f"generator.truncation_psi must lie in (0, 1], got {self.truncation_psi}")
        if self.sr not in ("bilinear", "conv", "identity"):
            raise ConfigError(f"generator.sr must be 'bilinear', 'conv' or 'identity', got {self.sr!r}")
        if self.init not in ("zeros", "normal", "constant"):
            raise ConfigError(f"generator.init must be 'zeros', 'normal' or 'constant', got {self.init!r}")
        if not self.pose_radius > 0.0:
            raise ConfigError(f"generator.pose_radius must be > 0, got {self.pose_radius}")
        if self.pitch_limit < 0.0:
            raise ConfigError(f"generator.pitch_limit must be >= 0, got {self.pitch_limit}")


@dataclass(frozen=True)
class ScheduleSection:
    steps: int = 1000
    beta_lo: float = 1e-4
    beta_hi: float = 2e-2

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"schedule.steps must be >= 1, got {self.steps}")


@dataclass(frozen=True)
class ScoreSection:
    source: str
    prompt: str = ""
    negative_prompt: str = ""
    cfg_weight: float = 7.5
    control_weight: float = 1.0
    var0: float = 1.0
    mean: str = "zeros"
    mean_value: float = 0.0
    mean_seed: int = 0
    mean_scale: float = 1.0
    gmm_means: tuple[float, ...] = (-2.0, 2.0)
    gmm_weights: tuple[float, ...] = (0.5, 0.5)
    backend_addr: str = "127.0.0.1:9000"
    timeout_s: float = 10.0

    def __post_init__(self) -> None:
        if self.source not in ("gaussian", "gmm", "backend"):
            raise ConfigError(f"score.source must be 'gaussian', 'gmm' or 'backend', got {self.source!r}")
        if self.cfg_weight < 0.0:
            raise ConfigError(f"score.cfg_weight must be >= 0, got {self.cfg_weight}")
        if not 0.0 <= self.control_weight <= 1.0:
            raise ConfigError(f"score.control_weight must lie in [0, 1], got {self.control_weight}")
        if not self.var0 > 0.0:
            raise ConfigError(f"score.var0 must be > 0, got {self.var0}")
        if self.mean not in ("zeros", "constant", "normal", "symmetric-normal"):
            raise ConfigError(
                f"score.mean must be 'zeros', 'constant', 'normal' or 'symmetric-normal', got {self.mean!r}"
            )
        if self.source == "gmm":
            if len(self.gmm_means) == 0 or len(self.gmm_means) != len(self.gmm_weights):
                raise ConfigError("score.gmm_means and score.gmm_weights must be non-empty and equal-length")
        if not self.timeout_s > 0.0:
            raise ConfigError(f"score.timeout_s must be > 0, got {self.timeout_s}")


def _check_phase(section: str, t_lo: float, t_hi: float, rank_weights: tuple[float, ...]) -> None:
    if not 0.0 <= t_lo < t_hi <= 1.0:
        raise ConfigError(f"{section}.t_lo/{section}.t_hi must satisfy 0 <= lo < hi <= 1, got ({t_lo}, {t_hi})")
    if rank_weights:
        if rank_weights[0] != 1.0:
            raise ConfigError(f"{section}.rank_weights must start at 1.0, got {rank_weights!r}")
        if any(not 0.0 <= v <= 1.0 for v in rank_weights):
            raise ConfigError(f"{section}.rank_weights entries must lie in [0, 1], got {rank_weights!r}")
        if any(a < b for a, b in zip(rank_weights, rank_weights[1:])):
            raise ConfigError(f"{section}.rank_weights must be non-increasing, got {rank_weights!r}")


@dataclass(frozen=True)
class MirrorSection:
    enabled: bool = True
    t_lo: float = 0.70
    t_hi: float = 0.96
    rank_weights: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    average: bool = False

    def __post_init__(self) -> None:
        _check_phase("mirror", self.t_lo, self.t_hi, self.rank_weights)


@dataclass(frozen=True)
class GridSection:
    enabled: bool = False
    t_lo: float = 0.30
    t_hi: float = 0.80
    tap: str = "pre_sr"
    rank_weights: tuple[float, ...] = (1.0, 0.75, 0.5, 0.25)
    pose_mode: str = "independent"

    def __post_init__(self) -> None:
        _check_phase("grid", self.t_lo, self.t_hi, self.rank_weights)
        if self.tap not in ("pre_sr", "post_sr"):
            raise ConfigError(f"grid.tap must be 'pre_sr' or 'post_sr', got {self.tap!r}")
        if self.pose_mode not in ("independent", "azimuth"):
            raise ConfigError(f"grid.pose_mode must be 'independent' or 'azimuth', got {self.pose_mode!r}")


@dataclass(frozen=True)
class RunConfig:
    """Fully validated, fully defaulted description of one training run."""

    run: RunSection
    generator: GeneratorSection
    schedule: ScheduleSection
    score: ScoreSection
    mirror: MirrorSection = field(default_factory=MirrorSection)
    grid: GridSection = field(default_factory=GridSection)

    def __post_init__(self) -> None:
        if not (self.mirror.enabled or self.grid.enabled):
            raise ConfigError("at least one of mirror.enabled or grid.enabled must be true")
        for name, section in (("mirror", self.mirror), ("grid", self.grid)):
            if section.enabled and section.rank_weights and len(section.rank_weights) != self.generator.channels:
                raise ConfigError(
                    f"{name}.rank_weights length {len(section.rank_weights)} must equal "
                    f"generator.channels {self.generator.channels}"
                )


_SECTION_TYPES = {
    "run": RunSection,
    "generator": GeneratorSection,
    "schedule": ScheduleSection,
    "score": ScoreSection,
    "mirror": MirrorSection,
    "grid": GridSection,
}


def _check_type(path: str, tag: str, value: Any) -> Any:
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path}: expected bool, got {type(value).__name__}")
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {path}: expected integer, got {type(value).__name__}")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path}: expected float, got {type(value).__name__}")
        return float(value)
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"config key {path}: expected string, got {type(value).__name__}")
        return value
    if tag == "float_list":
        if not isinstance(value, (list, tuple)) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ConfigError(f"config key {path}: expected list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    raise AssertionError(f"unknown schema tag {tag}")


def parse_config_dict(data: Mapping[str, Any]) -> RunConfig:
    """Validate a nested mapping against the schema and build a RunConfig."""
    for section in data:
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section: {section}")
        if not isinstance(data[section], Mapping):
            raise ConfigError(f"config section {section} must be a table")
        for key in data[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key: {section}.{key}")

    sections: dict[str, Any] = {}
    for section, keys in _SCHEMA.items():
        values: dict[str, Any] = {}
        for key, (tag, default) in keys.items():
            raw = data.get(section, {}).get(key, default)
            if raw is _REQUIRED:
                raise ConfigError(f"missing required config key: {section}.{key}")
            values[key] = _check_type(f"{section}.{key}", tag, raw)
        sections[section] = _SECTION_TYPES[section](**values)
    return RunConfig(**sections)


def apply_env_overrides(data: dict[str, Any], environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Merge DISTILL_SECTION__KEY environment variables into a config dict."""
    environ = os.environ if environ is None else environ
    out = {section: dict(table) for section, table in data.items() if isinstance(table, Mapping)}
    out.update({k: v for k, v in data.items() if not isinstance(v, Mapping)})
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX) :]
        if "__" not in rest:
            raise ConfigError(f"environment override {name} must look like {ENV_PREFIX}SECTION__KEY")
        section, key = rest.split("__", 1)
        section, key = section.lower(), key.lower()
        try:
            value = tomllib.loads(f"v = {raw}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw
        out.setdefault(section, {})[key] = value
    return out


def parse_config(path: str | Path, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Load, override, validate, and default a TOML run configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return parse_config_dict(apply_env_overrides(data, environ))


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    """Nested plain-python dict (tuples become lists), schema key order."""
    out: dict[str, Any] = {}
    for section, keys in _SCHEMA.items():
        table = getattr(cfg, section)
        out[section] = {}
        for key in keys:
            value = getattr(table, key)
            out[section][key] = list(value) if isinstance(value, tuple) else value
    return out


def canonical_config_json(cfg: RunConfig) -> str:
    """Deterministic JSON used for digests and report echoes."""
    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as TOML; parse(serialize(cfg)) == cfg."""
    lines: list[str] = []
    data = config_to_dict(cfg)
    for section, table in data.items():
        lines.append(f"[{section}]")
        for key, value in table.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)
