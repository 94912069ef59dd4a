"""Hyperparameter dataclasses and their TOML round trip.

Defaults for the Q-learning block (100 histogram bins, 25 actions,
discount 0.99) are the published values; everything else is a tuned or
conventional choice.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MODES = ("single", "cotrack", "active-fixed", "active-qlearn")


class ConfigError(ValueError):
    """A configuration value is missing, malformed or out of range."""


class DataError(RuntimeError):
    """Input data (sequence, ground truth, results) is missing or inconsistent."""


@dataclass(frozen=True)
class FeatureConfig:
    n_samples: int = 243
    scales: tuple[float, ...] = (0.95, 1.0, 1.05)
    search_factor: float = 3.0
    patch_size: int = 32
    hog_cell: int = 8
    hog_block: int = 2
    hog_bins: int = 9


@dataclass(frozen=True)
class SvmConfig:
    lam: float = 1e-4
    lr: float = 0.1
    epochs: int = 20
    batch_size: int = 256


@dataclass(frozen=True)
class PolicyConfig:
    n_bins: int = 100
    n_actions: int = 25
    gamma: float = 0.99
    bge_scale: float = 0.5
    lr_power: float = 0.6
    update_rule: str = "qlearning"  # or "sarsa"
    reward_mode: str = "scaled"  # "scaled": 3*iou above 0.9; "flat": 3
    loss_streak: int = 5
    init_noise: float = 0.01


@dataclass(frozen=True)
class TrackerConfig:
    tau: float = 0.5
    window: int = 10
    k: int = 5
    mode: str = "active-fixed"
    delta: float = 0.25
    init_pos_iou: float = 0.7
    init_neg_iou: float = 0.3
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def __post_init__(self):
        validate(self)

    def with_(self, **changes) -> TrackerConfig:
        return replace(self, **changes)


def validate(cfg: TrackerConfig) -> None:
    if not 0.0 < cfg.tau < 1.0:
        raise ConfigError(f"tau must lie in (0, 1), got {cfg.tau}")
    if cfg.window < 1:
        raise ConfigError(f"window must be >= 1, got {cfg.window}")
    if cfg.k < 1:
        raise ConfigError(f"k must be >= 1, got {cfg.k}")
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if not 0.0 <= cfg.delta <= 0.5:
        raise ConfigError(f"delta must lie in [0, 0.5], got {cfg.delta}")
    if not 0.0 <= cfg.init_neg_iou <= cfg.init_pos_iou <= 1.0:
        raise ConfigError("need 0 <= init_neg_iou <= init_pos_iou <= 1")

    fc = cfg.features
    if not fc.scales or any(s <= 0 for s in fc.scales):
        raise ConfigError(f"scales must be positive and non-empty, got {fc.scales}")
    per_scale, rem = divmod(fc.n_samples, len(fc.scales))
    side = math.isqrt(per_scale) if per_scale > 0 else 0
    if rem or per_scale == 0 or side * side != per_scale:
        raise ConfigError(
            f"n_samples={fc.n_samples} over {len(fc.scales)} scales must give a perfect square per scale"
        )
    if fc.patch_size % fc.hog_cell or fc.patch_size // fc.hog_cell < fc.hog_block:
        raise ConfigError("patch_size must be a multiple of hog_cell and hold one block")

    if cfg.svm.lam <= 0 or cfg.svm.lr <= 0 or cfg.svm.epochs < 1 or cfg.svm.batch_size < 1:
        raise ConfigError(f"invalid SVM settings: {cfg.svm}")

    pc = cfg.policy
    if pc.n_bins < 1 or pc.n_actions < 2:
        raise ConfigError("policy needs n_bins >= 1 and n_actions >= 2")
    if not 0.0 < pc.gamma <= 1.0:
        raise ConfigError(f"gamma must lie in (0, 1], got {pc.gamma}")
    if pc.update_rule not in ("qlearning", "sarsa"):
        raise ConfigError(f"update_rule must be qlearning or sarsa, got {pc.update_rule!r}")
    if pc.reward_mode not in ("scaled", "flat"):
        raise ConfigError(f"reward_mode must be scaled or flat, got {pc.reward_mode!r}")


_SECTIONS = {"features": FeatureConfig, "svm": SvmConfig, "policy": PolicyConfig}


def _coerce(cls, name: str, raw: dict[str, Any]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known or key in _SECTIONS:
            raise ConfigError(f"unknown key {name}.{key}")
        default = known[key].default
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name}.{key} must be a list")
            value = tuple(float(v) for v in value)
        elif isinstance(default, bool):
            value = bool(value)
        elif isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name}.{key} must be an integer, got {value}")
            value = int(value)
        elif isinstance(default, float):
            value = float(value)
        elif isinstance(default, str):
            value = str(value)
        kwargs[key] = value
    return kwargs


def config_from_dict(data: dict[str, Any]) -> TrackerConfig:
    top = dict(data.get("tracker", {}))
    for key in data:
        if key != "tracker" and key not in _SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
    kwargs = _coerce(TrackerConfig, "tracker", top)
    try:
        for section, cls in _SECTIONS.items():
            kwargs[section] = cls(**_coerce(cls, section, data.get(section, {})))
        return TrackerConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> TrackerConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v) or math.isinf(v):
            raise ConfigError(f"cannot write non-finite value {v}")
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def dump_toml(sections: dict[str, dict[str, Any]]) -> str:
    """Serialize ``{section: {key: scalar-or-list}}``; floats use repr so they round-trip."""
    out = []
    for name, table in sections.items():
        out.append(f"[{name}]")
        for key, value in table.items():
            if value is None:
                continue
            out.append(f"{key} = {_toml_value(value)}")
        out.append("")
    return "\n".join(out)


def config_to_dict(cfg: TrackerConfig) -> dict[str, dict[str, Any]]:
    raw = asdict(cfg)
    sections = {"tracker": {k: v for k, v in raw.items() if k not in _SECTIONS}}
    for name in _SECTIONS:
        sections[name] = raw[name]
    return sections


def dump_config(cfg: TrackerConfig, extra: dict[str, dict[str, Any]] | None = None) -> str:
    sections = config_to_dict(cfg)
    if extra:
        sections.update(extra)
    return dump_toml(sections)
