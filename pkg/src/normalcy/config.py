"""Run configuration: one section per stage plus a global seed.

A configuration is JSON with optional sections; every key must be known.
Flat overrides of the form ``section.key=value`` are applied on top (values
are parsed as JSON, falling back to plain strings). Sections that carry a
``seed`` inherit the global seed unless they set their own.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Any

from .errors import ConfigError
from .hierarchy import HierarchyConfig
from .lbt import LbtConfig
from .metrics import DEFAULT_PERCENTILE
from .mjpf import MjpfConfig
from .ocsvm import OcSvmConfig
from .swdbn import SwdbnConfig
from .tcp import BACKGROUND_THRESHOLD, BlockSpec, FusionWeights


@dataclass(frozen=True)
class ItqSection:
    k: int = 7
    iters: int = 50
    init: str = "random"
    max_vectors: int = 50_000
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.iters < 0 or self.max_vectors < 1:
            raise ConfigError(f"invalid ITQ settings: {self}")
        if self.init not in ("random", "identity"):
            raise ConfigError(f"unknown ITQ init {self.init!r}")


@dataclass(frozen=True)
class TcpSection:
    length: int = 14
    overlap: int = 13
    support: str = "observed"
    threshold: float = BACKGROUND_THRESHOLD
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        self.blocks()
        self.fusion()
        if self.support not in ("observed", "all"):
            raise ConfigError(f"unknown TCP support {self.support!r}")
        if not 0 <= self.threshold <= 1:
            raise ConfigError("background threshold must lie in [0, 1]")

    def blocks(self) -> BlockSpec:
        return BlockSpec(self.length, self.overlap)

    def fusion(self) -> FusionWeights:
        return FusionWeights(self.alpha, self.beta)


@dataclass(frozen=True)
class EvalSection:
    percentile: float = DEFAULT_PERCENTILE

    def __post_init__(self):
        if not 0 <= self.percentile <= 100:
            raise ConfigError("percentile must lie in [0, 100]")


@dataclass(frozen=True)
class SimulateSection:
    laps: int | None = None  # overrides the scenario file when set
    seed: int | None = None

    def __post_init__(self):
        if self.laps is not None and self.laps < 1:
            raise ConfigError("laps must be >= 1")


SECTIONS: dict[str, type] = {
    "lbt": LbtConfig,
    "ocsvm": OcSvmConfig,
    "itq": ItqSection,
    "tcp": TcpSection,
    "swdbn": SwdbnConfig,
    "mjpf": MjpfConfig,
    "hierarchy": HierarchyConfig,
    "eval": EvalSection,
    "simulate": SimulateSection,
}


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


class RunConfig:
    """Validated configuration with one dataclass instance per section."""

    def __init__(self, raw: dict | None = None):
        raw = {} if raw is None else raw
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(raw) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
        self.seed = seed
        self.raw = raw
        self.sections: dict[str, Any] = {}
        for name, cls in SECTIONS.items():
            sec = raw.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            names = {f.name for f in fields(cls)}
            bad = set(sec) - names
            if bad:
                raise ConfigError(f"unknown keys in section {name!r}: {sorted(bad)}")
            values = dict(sec)
            if "seed" in names and "seed" not in values:
                values["seed"] = seed
            try:
                self.sections[name] = cls(**values)
            except ConfigError:
                raise
            except (TypeError, ValueError) as e:
                raise ConfigError(f"section {name!r}: {e}") from None

    def __getattr__(self, name):
        sections = self.__dict__.get("sections", {})
        if name in sections:
            return sections[name]
        raise AttributeError(name)

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        raw: dict = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
            except json.JSONDecodeError as e:
                raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        raw = json.loads(json.dumps(raw))
        for item in overrides:
            apply_override(raw, item)
        return cls(raw)

    def resolved(self) -> dict:
        out: dict[str, Any] = {"seed": self.seed}
        for name, sec in self.sections.items():
            d = asdict(sec)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def digest(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value`` (or ``seed=value``) to a raw config dict."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    if parts == ["seed"]:
        raw["seed"] = _parse_value(value)
        return
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"unknown configuration key {key!r}")
    section, name = parts
    if name not in {f.name for f in fields(SECTIONS[section])}:
        raise ConfigError(f"unknown configuration key {key!r}")
    raw.setdefault(section, {})[name] = _parse_value(value)
