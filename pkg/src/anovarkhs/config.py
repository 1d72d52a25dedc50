"""Run configuration: one YAML (or JSON) document per run.

Schema (every key optional except ``command``)::

    command: fit | tune | simulate | sweep | probe
    seed: 0                 # overrides scenario.seed
    jobs: 1
    output_dir: out
    scenario: {...}         # Scenario fields, kernel and fit nested
    data:                   # fit / tune: external design and response
      design: design.csv
      response: response.csv
    probe:
      kind: covering | sudakov | concentration
      ...                   # see PROBE_DEFAULTS

Dotted overrides (``scenario.kernel.family=gaussian``) are applied to the
parsed document before validation; values are parsed as YAML scalars.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .bench import Scenario

__all__ = ["ConfigError", "RunConfig", "COMMANDS", "PROBE_DEFAULTS", "load_config", "parse_config",
           "apply_overrides"]

COMMANDS = ("fit", "tune", "simulate", "sweep", "probe")

PROBE_DEFAULTS = {
    "covering": {"n_points": 60, "dim": 2, "deltas": [0.05, 0.1, 0.2, 0.4, 0.8]},
    "sudakov": {"alpha": 3.0, "n_points": 40, "dim": 5, "n_mc": 20000,
                "deltas": [0.25, 0.5, 1.0, 2.0, 4.0]},
    "concentration": {"alpha": 3.0, "n": 50, "phi": "max", "n_mc": 10000, "grid_size": 40,
                      "min_exceed": 30, "standardize": True},
}

_TOP_KEYS = {"command", "seed", "jobs", "output_dir", "scenario", "data", "probe"}


class ConfigError(ValueError):
    """Configuration does not parse or violates the schema."""


@dataclass
class RunConfig:
    command: str
    seed: int = 0
    jobs: int = 1
    output_dir: str = "out"
    scenario: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)

    def build_scenario(self) -> Scenario:
        sc = dict(self.scenario)
        sc["seed"] = self.seed
        try:
            return Scenario.from_dict(sc)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"scenario: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "seed": self.seed,
            "jobs": self.jobs,
            "output_dir": self.output_dir,
            "scenario": copy.deepcopy(self.scenario),
            "data": copy.deepcopy(self.data),
            "probe": copy.deepcopy(self.probe),
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, allow_unicode=True)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    cur = doc
    for p in parts[:-1]:
        nxt = cur.get(p)
        if nxt is None:
            nxt = cur[p] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r}: {p!r} is not a mapping")
        cur = nxt
    cur[parts[-1]] = value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"override {item!r} has an empty key")
        try:
            value = yaml.safe_load(raw) if raw.strip() else ""
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from exc
        _set_dotted(doc, key, value)
    return doc


def parse_config(doc) -> RunConfig:
    """Validate a parsed document. Scenario semantics are checked too."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    cmd = doc.get("command")
    if cmd not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cmd!r}")
    for key in ("scenario", "data", "probe"):
        if doc.get(key) is not None and not isinstance(doc[key], dict):
            raise ConfigError(f"{key} must be a mapping")
    try:
        seed = int(doc.get("seed", doc.get("scenario", {}) and doc["scenario"].get("seed", 0)) or 0)
        jobs = int(doc.get("jobs", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed/jobs: {exc}") from exc
    if seed < 0:
        raise ConfigError("seed must be >= 0")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    cfg = RunConfig(
        command=cmd,
        seed=seed,
        jobs=jobs,
        output_dir=str(doc.get("output_dir", "out")),
        scenario=dict(doc.get("scenario") or {}),
        data=dict(doc.get("data") or {}),
        probe=dict(doc.get("probe") or {}),
    )
    cfg.scenario.pop("seed", None)
    if cmd != "probe":
        cfg.build_scenario()
    else:
        kind = cfg.probe.get("kind")
        if kind not in PROBE_DEFAULTS:
            raise ConfigError(f"probe.kind must be one of {sorted(PROBE_DEFAULTS)}")
        extra = set(cfg.probe) - set(PROBE_DEFAULTS[kind]) - {"kind"}
        if extra:
            raise ConfigError(f"unknown probe keys for {kind}: {sorted(extra)}")
    bad = set(cfg.data) - {"design", "response"}
    if bad:
        raise ConfigError(f"unknown data keys: {sorted(bad)}")
    if "response" in cfg.data and "design" not in cfg.data:
        raise ConfigError("data.response needs data.design")
    return cfg


def load_config(path, overrides=None) -> RunConfig:
    """Read, override and validate. I/O errors propagate as ``OSError``."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(apply_overrides(doc or {}, overrides))
