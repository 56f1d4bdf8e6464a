"""Run configuration: one INI file with a section per component, plus overrides.

Every component seed not set explicitly is derived from ``[run] seed`` so a single
number reproduces a whole experiment.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .baselines import ForestConfig, SvmConfig
from .data import GeneratorConfig
from .dqn import DqnConfig
from .env import EnvConfig
from .evaluation import INFERENCE_MODES, STRATEGIES, PopulationConfig
from .ppo import PpoConfig
from .seeding import derive_seed

CONFIG_ENV_VAR = "TEAMSWAP_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    n_folds: int = 4
    gap_days: int = 7
    burn_in_rounds: int = 30
    strategies: str = ",".join(STRATEGIES)
    inference_alpha: float = 1.0
    inference_mode: str = "stochastic"
    alphas: str = "0.7,0.8,0.9,1.0"
    sweep_timesteps: int = 50_000
    grid_search: bool = False

    def __post_init__(self):
        if self.n_folds < 2 or self.gap_days < 0 or self.burn_in_rounds < 0:
            raise ValueError("n_folds must be >= 2; gap_days and burn_in_rounds >= 0")
        if not 0.7 <= self.inference_alpha <= 1.0:
            raise ValueError("inference_alpha must lie in [0.7, 1.0]")
        if self.inference_mode not in INFERENCE_MODES:
            raise ValueError(f"inference_mode must be one of {INFERENCE_MODES}")
        unknown = set(self.strategy_list) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown strategies {sorted(unknown)}; choose from {list(STRATEGIES)}")
        self.alpha_list  # noqa: B018 (validates)

    @property
    def strategy_list(self) -> list[str]:
        return [s.strip() for s in self.strategies.split(",") if s.strip()]

    @property
    def alpha_list(self) -> list[float]:
        try:
            return [float(a) for a in self.alphas.split(",") if a.strip()]
        except ValueError as exc:
            raise ValueError(f"alphas must be comma-separated numbers: {self.alphas!r}") from exc


@dataclass(frozen=True)
class PathsSection:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"


SECTIONS: dict[str, type] = {
    "run": RunSection,
    "paths": PathsSection,
    "generator": GeneratorConfig,
    "env": EnvConfig,
    "dqn": DqnConfig,
    "ppo": PpoConfig,
    "forest": ForestConfig,
    "svm": SvmConfig,
    "population": PopulationConfig,
}
SEEDED = ("generator", "dqn", "ppo", "forest", "svm", "population")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _base_type(tp):
    """(inner type, optional?) for annotations like ``float | None``."""
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def coerce(section: str, key: str, raw, tp):
    if not isinstance(raw, str):
        return raw
    base, optional = _base_type(tp)
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if base is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if base is int:
            return int(text.replace("_", ""))
        if base is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"invalid value for '{section}.{key}': {raw!r} (expected {base.__name__})") from None


@dataclass(frozen=True)
class RunConfig:
    """Merged view of all component configs."""

    run: RunSection = RunSection()
    paths: PathsSection = PathsSection()
    generator: GeneratorConfig = GeneratorConfig()
    env: EnvConfig = EnvConfig()
    dqn: DqnConfig = DqnConfig()
    ppo: PpoConfig = PpoConfig()
    forest: ForestConfig = ForestConfig()
    svm: SvmConfig = SvmConfig()
    population: PopulationConfig = PopulationConfig()
    explicit: frozenset = field(default=frozenset(), compare=False)

    @classmethod
    def from_values(cls, values: Mapping[str, Mapping[str, object]]) -> "RunConfig":
        """Build from ``{section: {key: value}}``; strings are coerced to the field type."""
        built, explicit = {}, set()
        for section in values:
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section '{section}'")
        for section, cls_ in SECTIONS.items():
            types_ = field_types(cls_)
            given = dict(values.get(section, {}))
            for key in given:
                if key not in types_:
                    raise ConfigError(f"unknown config key '{section}.{key}'")
            kwargs = {k: coerce(section, k, v, types_[k]) for k, v in given.items()}
            explicit.update(f"{section}.{k}" for k in kwargs)
            try:
                built[section] = cls_(**kwargs)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{section}] {exc}") from None
        seed = built["run"].seed
        for section in SEEDED:
            if f"{section}.seed" not in explicit:
                built[section] = dataclasses.replace(built[section], seed=derive_seed(seed, section))
        return cls(**built, explicit=frozenset(explicit))

    def values(self) -> dict[str, dict[str, object]]:
        return {s: dataclasses.asdict(getattr(self, s)) for s in SECTIONS}

    def explicit_values(self) -> dict[str, dict[str, object]]:
        out: dict[str, dict[str, object]] = {}
        for dotted in self.explicit:
            s, k = dotted.split(".", 1)
            out.setdefault(s, {})[k] = getattr(getattr(self, s), k)
        return out

    def with_overrides(self, overrides: Mapping[str, Mapping[str, object]]) -> "RunConfig":
        merged = self.explicit_values()
        for s, kv in overrides.items():
            merged.setdefault(s, {}).update(kv)
        return RunConfig.from_values(merged)

    def to_ini(self) -> str:
        lines = []
        for s, kv in self.values().items():
            lines.append(f"[{s}]")
            lines += [f"{k} = {'none' if v is None else v}" for k, v in kv.items()]
            lines.append("")
        return "\n".join(lines)

    @property
    def data_dir(self) -> Path:
        return Path(self.paths.data_dir)

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.paths.checkpoint_dir)

    @property
    def report_dir(self) -> Path:
        return Path(self.paths.report_dir)


def read_ini(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return {s: dict(parser.items(s)) for s in parser.sections()}


def parse_assignment(text: str) -> tuple[str, str, str]:
    """``section.key=value`` -> (section, key, value)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, value = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    return section, key.strip(), value


def load_config(path=None, overrides: Mapping[str, Mapping[str, object]] | None = None) -> RunConfig:
    """File (explicit path, else ``$TEAMSWAP_CONFIG`` if set) merged with overrides."""
    path = path or os.environ.get(CONFIG_ENV_VAR) or None
    values = read_ini(path) if path else {}
    for s, kv in (overrides or {}).items():
        values.setdefault(s, {}).update(kv)
    return RunConfig.from_values(values)
