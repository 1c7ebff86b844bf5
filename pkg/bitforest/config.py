# bitforest/config.py
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

from .errors import ConfigError

DATA_DIR_ENV = "BITFOREST_DATA_DIR"
CONFIG_FILE = "config"


@dataclass(frozen=True)
class ForestConfig:
    """Shape of every tree in the forest.

    A tree holds ``branching ** height`` records; with the defaults that is
    32768 records split into one root mask, 32 middle masks and 1024 leaf
    masks per feature.
    """
    branching: int = 32
    height: int = 3
    create_batch_threshold: int = 8

    def __post_init__(self):
        if self.branching < 2 or self.branching > 32 or self.branching & (self.branching - 1):
            raise ConfigError(f"branching must be a power of two in [2, 32], got {self.branching}")
        if self.height != 3:
            raise ConfigError(f"only height 3 (root/middle/leaf) is supported, got {self.height}")
        if self.create_batch_threshold < 1:
            raise ConfigError("create_batch_threshold must be at least 1")

    @property
    def tree_capacity(self) -> int:
        return self.branching ** self.height

    @property
    def middle_capacity(self) -> int:
        # records under one middle node (M_n)
        return self.branching ** 2

    @property
    def leaf_capacity(self) -> int:
        # records under one leaf node (L_n)
        return self.branching

    @property
    def shift(self) -> int:
        return self.branching.bit_length() - 1


@dataclass(frozen=True)
class SecurityParameters:
    alpha: float = 0.99999
    beta: float = 0.99
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie strictly between 0 and 1, got {value}")


@dataclass(frozen=True)
class EngineSettings:
    forest: ForestConfig = field(default_factory=ForestConfig)
    security: SecurityParameters = field(default_factory=SecurityParameters)
    data_dir: Optional[str] = None
    seed: int = 0

    def to_file_values(self) -> Dict[str, str]:
        return {
            "branching": str(self.forest.branching),
            "height": str(self.forest.height),
            "createBatchThreshold": str(self.forest.create_batch_threshold),
            "alpha": repr(self.security.alpha),
            "beta": repr(self.security.beta),
            "gamma": repr(self.security.gamma),
        }

    def with_overrides(self, **overrides) -> "EngineSettings":
        """Return a copy with the non-None keyword overrides applied."""
        forest_keys = {"branching", "height", "create_batch_threshold"}
        security_keys = {"alpha", "beta", "gamma"}
        forest_changes = {k: v for k, v in overrides.items() if k in forest_keys and v is not None}
        security_changes = {k: v for k, v in overrides.items() if k in security_keys and v is not None}
        other = {k: v for k, v in overrides.items()
                 if k not in forest_keys | security_keys and v is not None}
        return replace(
            self,
            forest=replace(self.forest, **forest_changes),
            security=replace(self.security, **security_changes),
            **other,
        )


_FILE_KEYS = {
    "branching": ("branching", int),
    "height": ("height", int),
    "createBatchThreshold": ("create_batch_threshold", int),
    "alpha": ("alpha", float),
    "beta": ("beta", float),
    "gamma": ("gamma", float),
}


def parse_config_text(text: str) -> Dict[str, object]:
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {number}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _FILE_KEYS:
            raise ConfigError(f"config line {number}: unknown key {key!r}")
        attr, cast = _FILE_KEYS[key]
        try:
            values[attr] = cast(value)
        except ValueError:
            raise ConfigError(f"config line {number}: bad value for {key}: {value!r}") from None
    return values


def load_settings(data_dir: Optional[str] = None, **overrides) -> EngineSettings:
    """Resolve settings: defaults, then the data dir's config file, then overrides."""
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    settings = EngineSettings(data_dir=data_dir)
    if data_dir:
        path = os.path.join(data_dir, CONFIG_FILE)
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                settings = settings.with_overrides(**parse_config_text(f.read()))
    return settings.with_overrides(**overrides)


def write_config_file(data_dir: str, settings: EngineSettings) -> str:
    path = os.path.join(data_dir, CONFIG_FILE)
    lines = [f"{key}={value}" for key, value in settings.to_file_values().items()]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return path
