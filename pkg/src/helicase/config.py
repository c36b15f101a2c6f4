"""Run configuration with layered resolution: defaults < config file <
environment < command-line flags."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .uncertainty import AccumulationRule

ABLATIONS = ("no-uq", "min-rule", "n1", "one-agent")


def _default_model_tags() -> dict[str, str]:
    # Heterogeneous assignment: thinking-grade model for the loop-driving
    # roles, instruct-grade for structured extraction.
    return {
        "planner": "qwen3-next-80b-a3b-thinking",
        "web_search": "qwen3-next-80b-a3b-thinking",
        "reasoning": "qwen3-next-80b-a3b-thinking",
        "coding": "qwen3-next-80b-a3b-instruct",
        "judge": "qwen3-next-80b-a3b-thinking",
    }


def _default_cost_table() -> dict[str, float]:
    # Only the ordering web_search > reasoning > coding is fixed; these
    # defaults are configurable.
    return {"web_search": 3.0, "reasoning": 2.0, "coding": 1.0}


@dataclass
class RunConfig:
    n_min: int = 1
    n_max: int = 10
    tau_low: float = 0.3
    tau_high: float = 0.7
    alpha: float = 0.3
    tau_rho: float = 0.8
    delta_conv: float = 0.05
    patience: int = 3
    t_max: int = 10
    k_actions: int = 5
    concurrency_limit: int = 8
    accumulation_rule: AccumulationRule = AccumulationRule.MULTIPLICATIVE
    agent_model_tags: dict[str, str] = field(default_factory=_default_model_tags)
    cost_table: dict[str, float] = field(default_factory=_default_cost_table)
    # Ablation switches.
    uniform_priority: bool = False  # no-uq: priority = 1/cost
    force_n1: bool = False  # disable dynamic parallel search
    one_agent: bool = False  # collapse agent specialization

    def validate(self) -> None:
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        for name in ("tau_low", "tau_high", "tau_rho", "delta_conv"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0 or math.isnan(v):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.patience < 1 or self.t_max < 1 or self.k_actions < 1:
            raise ValueError("patience, t_max and k_actions must be >= 1")
        ct = self.cost_table
        if not (ct["web_search"] > ct["reasoning"] > ct["coding"] > 0):
            raise ValueError("cost_table must be strictly decreasing "
                             "over web_search > reasoning > coding")

    def apply_ablation(self, name: str) -> None:
        if name == "no-uq":
            self.uniform_priority = True
        elif name == "min-rule":
            self.accumulation_rule = AccumulationRule.MIN_BASED
        elif name == "n1":
            self.force_n1 = True
        elif name == "one-agent":
            self.one_agent = True
        else:
            raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["accumulation_rule"] = self.accumulation_rule.value
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        if "accumulation_rule" in kwargs:
            kwargs["accumulation_rule"] = AccumulationRule(kwargs["accumulation_rule"])
        return cls(**kwargs)


_ENV_PREFIX = "HELICASE_CFG_"

_SCALAR_FIELDS = {
    f.name: f.type
    for f in dataclasses.fields(RunConfig)
    if f.name not in ("agent_model_tags", "cost_table")
}


def _coerce(name: str, raw: str):
    if name == "accumulation_rule":
        return raw
    if name in ("uniform_priority", "force_n1", "one_agent"):
        return raw.lower() in ("1", "true", "yes")
    if name in ("n_min", "n_max", "patience", "t_max", "k_actions",
                "concurrency_limit"):
        return int(raw)
    return float(raw)


def load_config(
    config_path: Optional[str] = None,
    env: Optional[dict] = None,
    flag_overrides: Optional[dict] = None,
) -> RunConfig:
    """Layered config: defaults, then config file, then HELICASE_CFG_* env
    variables, then explicit flags. Later layers win per key."""
    doc = RunConfig().to_dict()
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            file_doc = json.load(fh)
        unknown = set(file_doc) - set(doc)
        if unknown:
            raise ValueError(f"unknown config keys in {config_path}: {sorted(unknown)}")
        doc.update(file_doc)
    if env:
        for key, raw in env.items():
            if not key.startswith(_ENV_PREFIX):
                continue
            name = key[len(_ENV_PREFIX):].lower()
            if name in _SCALAR_FIELDS:
                doc[name] = _coerce(name, raw)
    if flag_overrides:
        for name, value in flag_overrides.items():
            if value is not None:
                doc[name] = value
    config = RunConfig.from_dict(doc)
    config.validate()
    return config


def write_config_echo(config: RunConfig, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=1)
        fh.write("\n")
