"""JSON run configuration shared by all subcommands.

Example::

    {
      "inputs": ["logs/day1.log.gz"],
      "out": "results",
      "patterns": {"live_patterns": ["live", "tv"], "normalize_identity": false},
      "geo": {"kind": "table", "table": "geo.csv", "synonyms": "syn.csv",
              "cache": "geo_cache.csv", "deny_list": ["unknown"]},
      "topology": {"n_edges": 3, "ttl_by_service": {"LiveStreaming": 30}},
      "workload": {"requests_per_day": 100000},
      "report": {"include_local": false, "plot_data": true},
      "seed": 7,
      "threads": 2
    }

Relative paths resolve against the config file's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .classify import DEFAULT_PATTERNS, PatternConfig
from .simulate import TopologyConfig

KNOWN_KEYS = {"inputs", "out", "patterns", "geo", "topology", "workload", "report", "seed",
              "threads"}
GEO_KEYS = {"kind", "table", "synonyms", "cache", "deny_list", "url_template", "fields",
            "rate_per_minute", "timeout"}
REPORT_KEYS = {"include_local", "plot_data"}


class ConfigError(ValueError):
    """Invalid configuration (exit code 2)."""


@dataclass
class RunConfig:
    inputs: list = field(default_factory=list)
    out: Path | None = None
    patterns: PatternConfig = DEFAULT_PATTERNS
    geo: dict = field(default_factory=dict)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    workload: dict = field(default_factory=dict)
    report: dict = field(default_factory=dict)
    seed: int | None = None
    threads: int = 1
    base_dir: Path = field(default_factory=Path)

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def check_paths(self) -> None:
        """Config-referenced resources must exist before any work starts."""
        for key in ("table", "synonyms"):
            if self.geo.get(key) and not self.path(self.geo[key]).is_file():
                raise ConfigError(f"geo.{key}: no such file {self.path(self.geo[key])}")


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return config_from_dict(raw, p.parent)


def config_from_dict(raw, base_dir: Path = Path()) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(base_dir=base_dir)
        inputs = raw.get("inputs", [])
        if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
            raise ConfigError("inputs must be a list of paths")
        cfg.inputs = [cfg.path(i) for i in inputs]
        if raw.get("out") is not None:
            cfg.out = cfg.path(raw["out"])
        if "patterns" in raw:
            cfg.patterns = PatternConfig.from_dict(raw["patterns"])
        cfg.geo = dict(raw.get("geo", {}))
        if set(cfg.geo) - GEO_KEYS:
            raise ConfigError(f"unknown geo keys: {sorted(set(cfg.geo) - GEO_KEYS)}")
        if "topology" in raw:
            cfg.topology = TopologyConfig.from_dict(raw["topology"])
        cfg.workload = dict(raw.get("workload", {}))
        cfg.report = dict(raw.get("report", {}))
        if set(cfg.report) - REPORT_KEYS:
            raise ConfigError(f"unknown report keys: {sorted(set(cfg.report) - REPORT_KEYS)}")
        if "seed" in raw:
            cfg.seed = raw["seed"]
            if not isinstance(cfg.seed, int) or cfg.seed < 0:
                raise ConfigError("seed must be a non-negative integer")
        if "threads" in raw:
            cfg.threads = raw["threads"]
            if not isinstance(cfg.threads, int) or cfg.threads < 1:
                raise ConfigError("threads must be a positive integer")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg
