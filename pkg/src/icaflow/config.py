"""Runtime configuration: simple key = value files with env overrides.

Unknown keys are rejected so typos fail loudly; every key can also be set
through ``ICA_<KEY>`` environment variables, which keeps CI runs hermetic
without editing files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "ICA_"


@dataclass
class Config:
    kb_dir: str = "kb"
    pools_dir: str = "fixtures/pools"
    retrieval_k: int = 3
    prompt_token_budget: int = 4096
    max_output_tokens: int = 512
    max_branch_depth: int = 4
    min_divergent: int = 2
    max_divergent: int = 6
    max_trees: int = 3
    min_mismatch_nodes: int = 1
    skip_rate_threshold: float = 0.05
    client: str = "mock"  # mock | corrupt | http
    endpoint: str = ""
    model: str = ""
    corrupt_p: float = 0.3
    client_timeout: float = 30.0
    concurrency: int = 1

    def validate(self) -> None:
        if self.retrieval_k < 1:
            raise ConfigError("retrieval_k must be >= 1")
        for name in ("prompt_token_budget", "max_output_tokens", "max_branch_depth",
                     "max_divergent", "max_trees", "concurrency"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.min_divergent < 1 or self.min_divergent > self.max_divergent:
            raise ConfigError("need 1 <= min_divergent <= max_divergent")
        if not 0.0 <= self.skip_rate_threshold <= 1.0:
            raise ConfigError("skip_rate_threshold must be within [0, 1]")
        if not 0.0 <= self.corrupt_p <= 1.0:
            raise ConfigError("corrupt_p must be within [0, 1]")
        if self.client not in ("mock", "corrupt", "http"):
            raise ConfigError(f"unknown client {self.client!r}")
        if self.client == "http" and not self.endpoint:
            raise ConfigError("client = http requires an endpoint")


def _coerce(name: str, raw: str, target_type: type):
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def load_config(path: str | Path | None = None, env: dict | None = None) -> Config:
    """Defaults, then the config file, then ICA_* environment overrides."""
    env = os.environ if env is None else env
    config = Config()
    known = {f.name: f.type for f in fields(Config)}
    types = {name: type(getattr(config, name)) for name in known}

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        for line_no, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected `key = value`")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            setattr(config, key, _coerce(key, value.strip(), types[key]))

    for name in known:
        env_name = ENV_PREFIX + name.upper()
        if env_name in env:
            setattr(config, name, _coerce(name, env[env_name], types[name]))

    config.validate()
    return config
